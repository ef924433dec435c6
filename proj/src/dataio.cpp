#include "m3dm/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "m3dm/errors.hpp"

namespace m3dm {
namespace {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

constexpr char kMagic[4] = {'M', '3', 'D', 'M'};

const char* const kDatasetFields[] = {"w_proj", "s_pos", "s_neg", "p_pos", "p_neg"};

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Write to a sibling temp file and rename, so readers never see a partial file.
void atomic_write(const fs::path& file, const std::string& bytes) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, file);
}

std::string read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}
  template <class T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw TruncatedFileError("'" + file_ + "' ends early at byte " + std::to_string(bytes_.size()));
  }
  const std::string& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

// Row-major float32 block, one row per sample.
std::string pack_f32(const std::vector<const VectorXd*>& rows) {
  std::string out;
  for (const VectorXd* r : rows)
    for (Eigen::Index j = 0; j < r->size(); ++j) put(out, static_cast<float>((*r)[j]));
  return out;
}

std::vector<float> load_f32(const fs::path& file, std::size_t count, int dim, const std::string& field) {
  if (!fs::exists(file)) throw DataError("missing array file '" + file.string() + "'");
  const auto size = static_cast<std::size_t>(fs::file_size(file));
  const std::size_t expect = count * static_cast<std::size_t>(dim) * 4;
  if (size != expect) {
    const std::size_t row = count * 4;
    if (size < expect && (row == 0 || size % row != 0))
      throw TruncatedFileError("array file '" + file.string() + "' has " + std::to_string(size) + " bytes, expected " +
                               std::to_string(expect));
    if (row != 0 && size % row == 0)
      throw ManifestMismatchError("field '" + field + "': manifest dim " + std::to_string(dim) + " but '" +
                                  file.string() + "' holds dim " + std::to_string(size / row));
    throw ManifestMismatchError("array file '" + file.string() + "' has " + std::to_string(size) +
                                " bytes, manifest implies " + std::to_string(expect));
  }
  const std::string bytes = read_bytes(file);
  std::vector<float> v(count * static_cast<std::size_t>(dim));
  if (!v.empty()) std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

MatrixXd col(const VectorXd& v) { return v; }

}  // namespace

void quantize_f32(PairedDataset& ds) {
  auto q = [](VectorXd& v) { v = v.cast<float>().cast<double>(); };
  for (auto& s : ds.samples) {
    q(s.w_proj);
    q(s.p_pos);
    q(s.p_neg);
    s.s_pos = static_cast<float>(s.s_pos);
    s.s_neg = static_cast<float>(s.s_neg);
  }
}

std::string hyperplane_fingerprint(const AttributeHyperplane& h) {
  std::uint64_t f = fnv1a(h.normal.data(), static_cast<std::size_t>(h.normal.size()) * sizeof(double));
  f = fnv1a(&h.bias, sizeof(double), f);
  return hex16(f);
}

void save_dataset(const fs::path& dir, const DatasetFile& ds) {
  const auto& d = ds.data;
  const std::size_t n = d.samples.size();
  const int k = ds.dims.total();
  std::vector<const VectorXd*> w, pp, pn;
  VectorXd spos(static_cast<Eigen::Index>(n)), sneg(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = d.samples[i];
    if (s.w_proj.size() != ds.latent_dim || s.p_pos.size() != k || s.p_neg.size() != k)
      throw ContractError("sample " + std::to_string(i) + " does not match the dataset dims");
    if (s.id != i) throw ContractError("sample ids must equal row indices (row " + std::to_string(i) + ")");
    w.push_back(&s.w_proj);
    pp.push_back(&s.p_pos);
    pn.push_back(&s.p_neg);
    spos[static_cast<Eigen::Index>(i)] = s.s_pos;
    sneg[static_cast<Eigen::Index>(i)] = s.s_neg;
  }
  std::vector<const VectorXd*> sp, sn;
  VectorXd one(1);
  std::vector<VectorXd> sp_rows(n, one), sn_rows(n, one);
  for (std::size_t i = 0; i < n; ++i) {
    sp_rows[i][0] = spos[static_cast<Eigen::Index>(i)];
    sn_rows[i][0] = sneg[static_cast<Eigen::Index>(i)];
    sp.push_back(&sp_rows[i]);
    sn.push_back(&sn_rows[i]);
  }

  fs::create_directories(dir);
  atomic_write(dir / "w_proj.f32", pack_f32(w));
  atomic_write(dir / "s_pos.f32", pack_f32(sp));
  atomic_write(dir / "s_neg.f32", pack_f32(sn));
  atomic_write(dir / "p_pos.f32", pack_f32(pp));
  atomic_write(dir / "p_neg.f32", pack_f32(pn));

  json m;
  m["format_version"] = kDatasetFormatVersion;
  m["seed"] = d.seed;
  m["latent_dim"] = ds.latent_dim;
  m["k_id"] = ds.dims.k_id;
  m["k_expr"] = ds.dims.k_expr;
  m["k_tex"] = ds.dims.k_tex;
  m["count"] = n;
  m["mode"] = ds.mode;
  m["attributes"] = json::array({json{{"name", d.attribute},
                                      {"s_max", d.s_max},
                                      {"hyperplane_normal", vec_json(d.hyperplane.normal)},
                                      {"hyperplane_bias", d.hyperplane.bias},
                                      {"hyperplane_fingerprint", hyperplane_fingerprint(d.hyperplane)}}});
  json files = json::object();
  for (const char* f : kDatasetFields) files[f] = std::string(f) + ".f32";
  m["arrays"] = files;
  atomic_write(dir / "manifest.json", m.dump(2) + "\n");
}

DatasetFile load_dataset(const fs::path& dir) {
  const fs::path mf = dir / "manifest.json";
  if (!fs::exists(mf)) throw DataError("no manifest.json in '" + dir.string() + "'");
  json m;
  try {
    m = json::parse(read_bytes(mf));
  } catch (const json::exception& e) {
    throw DataError("cannot parse '" + mf.string() + "': " + e.what());
  }
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
      throw VersionMismatchError("dataset '" + dir.string() + "' has format_version " + std::to_string(version) +
                                 ", this build reads " + std::to_string(kDatasetFormatVersion));
    DatasetFile ds;
    ds.latent_dim = m.at("latent_dim").get<int>();
    ds.dims = {m.at("k_id").get<int>(), m.at("k_expr").get<int>(), m.at("k_tex").get<int>()};
    ds.mode = m.at("mode").get<std::string>();
    const auto n = m.at("count").get<std::size_t>();
    const json& attrs = m.at("attributes");
    if (attrs.size() != 1) throw ManifestMismatchError("dataset manifest must list exactly one attribute");
    const json& a = attrs[0];
    ds.data.attribute = a.at("name").get<std::string>();
    ds.data.s_max = a.at("s_max").get<double>();
    ds.data.hyperplane.normal = json_vec(a.at("hyperplane_normal"));
    ds.data.hyperplane.bias = a.at("hyperplane_bias").get<double>();
    if (ds.data.hyperplane.normal.size() != ds.latent_dim)
      throw ManifestMismatchError("hyperplane dim " + std::to_string(ds.data.hyperplane.normal.size()) +
                                  " differs from latent_dim " + std::to_string(ds.latent_dim));
    if (hyperplane_fingerprint(ds.data.hyperplane) != a.at("hyperplane_fingerprint").get<std::string>())
      throw ManifestMismatchError("hyperplane fingerprint does not match its coefficients");
    ds.data.seed = m.at("seed").get<std::uint64_t>();

    const json& files = m.at("arrays");
    const int k = ds.dims.total();
    auto file_of = [&](const char* f) { return dir / files.at(f).get<std::string>(); };
    const auto w = load_f32(file_of("w_proj"), n, ds.latent_dim, "w_proj");
    const auto sp = load_f32(file_of("s_pos"), n, 1, "s_pos");
    const auto sn = load_f32(file_of("s_neg"), n, 1, "s_neg");
    const auto pp = load_f32(file_of("p_pos"), n, k, "p_pos");
    const auto pn = load_f32(file_of("p_neg"), n, k, "p_neg");

    ds.data.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = ds.data.samples[i];
      s.id = i;
      s.w_proj = Eigen::Map<const Eigen::VectorXf>(w.data() + i * ds.latent_dim, ds.latent_dim).cast<double>();
      s.p_pos = Eigen::Map<const Eigen::VectorXf>(pp.data() + i * k, k).cast<double>();
      s.p_neg = Eigen::Map<const Eigen::VectorXf>(pn.data() + i * k, k).cast<double>();
      s.s_pos = sp[i];
      s.s_neg = sn[i];
    }
    return ds;
  } catch (const json::exception& e) {
    throw ManifestMismatchError("malformed manifest '" + mf.string() + "': " + e.what());
  }
}

// Container ----------------------------------------------------------------

const char* to_string(PayloadKind k) {
  switch (k) {
    case PayloadKind::controller: return "controller";
    case PayloadKind::direction: return "direction";
    case PayloadKind::hyperplane: return "hyperplane";
    case PayloadKind::world: return "world";
    case PayloadKind::basis: return "basis";
    case PayloadKind::reference: return "reference";
  }
  return "unknown";
}

const MatrixXd& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw DataError(std::string("container of kind ") + to_string(kind) + " has no tensor '" + name + "'");
}

void save_container(const fs::path& file, const Container& c) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kContainerFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.kind));
  const std::string meta = c.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index cc = 0; cc < t.value.cols(); ++cc) put<double>(out, t.value(r, cc));
  }
  atomic_write(file, out);
}

Container load_container(const fs::path& file) {
  const std::string bytes = read_bytes(file);
  Reader rd(bytes, file.string());
  if (rd.str(4) != std::string(kMagic, 4)) throw DataError("'" + file.string() + "' is not an M3DM container");
  const auto version = rd.get<std::uint32_t>();
  if (version != kContainerFormatVersion)
    throw VersionMismatchError("'" + file.string() + "' has format_version " + std::to_string(version) +
                               ", this build reads " + std::to_string(kContainerFormatVersion));
  Container c;
  const auto kind = rd.get<std::uint32_t>();
  if (kind < 1 || kind > 6) throw DataError("'" + file.string() + "' has unknown payload kind " + std::to_string(kind));
  c.kind = static_cast<PayloadKind>(kind);
  const auto meta_len = rd.get<std::uint64_t>();
  try {
    c.meta = json::parse(rd.str(meta_len));
  } catch (const json::exception& e) {
    throw DataError("'" + file.string() + "' has corrupt metadata: " + e.what());
  }
  const auto n = rd.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = rd.str(rd.get<std::uint32_t>());
    const auto rows = rd.get<std::uint64_t>();
    const auto cols = rd.get<std::uint64_t>();
    if (rows * cols > bytes.size()) throw TruncatedFileError("'" + file.string() + "' ends inside tensor '" + t.name + "'");
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index cc = 0; cc < t.value.cols(); ++cc) t.value(r, cc) = rd.get<double>();
    c.tensors.push_back(std::move(t));
  }
  if (!rd.done()) throw DataError("'" + file.string() + "' has trailing bytes");
  return c;
}

Container load_container(const fs::path& file, PayloadKind expected) {
  Container c = load_container(file);
  if (c.kind != expected)
    throw DataError("'" + file.string() + "' holds a " + to_string(c.kind) + ", expected a " + to_string(expected));
  return c;
}

Container to_container(const Controller& ctrl) {
  Container c;
  c.kind = PayloadKind::controller;
  c.meta = {{"attribute", ctrl.attribute()}, {"residual", ctrl.residual()}, {"layer_dims", ctrl.layer_dims()}};
  for (std::size_t i = 0; i < ctrl.layers().size(); ++i) {
    c.tensors.push_back({"W" + std::to_string(i), ctrl.layers()[i].W});
    c.tensors.push_back({"b" + std::to_string(i), col(ctrl.layers()[i].b)});
  }
  return c;
}

Controller controller_from(const Container& c) {
  if (c.kind != PayloadKind::controller) throw DataError("container is not a controller");
  const auto dims = c.meta.at("layer_dims").get<std::vector<int>>();
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const MatrixXd& b = c.tensor("b" + std::to_string(i));
    layers.push_back({c.tensor("W" + std::to_string(i)), b.col(0)});
  }
  return Controller(std::move(layers), c.meta.at("residual").get<bool>(), c.meta.at("attribute").get<std::string>());
}

Container to_container(const GlobalDirection& d) {
  Container c;
  c.kind = PayloadKind::direction;
  c.meta = {{"attribute", d.attribute}, {"train_seed", d.train_seed}, {"train_size", d.train_size}};
  c.tensors.push_back({"p_hat", col(d.p_hat)});
  c.tensors.push_back({"center", col(d.center)});
  MatrixXd alpha(1, 1);
  alpha(0, 0) = d.scale_alpha;
  c.tensors.push_back({"scale_alpha", alpha});
  return c;
}

GlobalDirection direction_from(const Container& c) {
  if (c.kind != PayloadKind::direction) throw DataError("container is not a direction");
  GlobalDirection d;
  d.attribute = c.meta.at("attribute").get<std::string>();
  d.train_seed = c.meta.at("train_seed").get<std::uint64_t>();
  d.train_size = c.meta.at("train_size").get<std::uint64_t>();
  d.p_hat = c.tensor("p_hat").col(0);
  d.center = c.tensor("center").col(0);
  d.scale_alpha = c.tensor("scale_alpha")(0, 0);
  return d;
}

Container to_container(const AttributeHyperplane& h, const std::string& attribute) {
  Container c;
  c.kind = PayloadKind::hyperplane;
  c.meta = {{"attribute", attribute}, {"fingerprint", hyperplane_fingerprint(h)}};
  c.tensors.push_back({"normal", col(h.normal)});
  MatrixXd s(1, 2);
  s << h.bias, h.train_accuracy;
  c.tensors.push_back({"bias_accuracy", s});
  return c;
}

AttributeHyperplane hyperplane_from(const Container& c) {
  if (c.kind != PayloadKind::hyperplane) throw DataError("container is not a hyperplane");
  AttributeHyperplane h;
  h.normal = c.tensor("normal").col(0);
  h.bias = c.tensor("bias_accuracy")(0, 0);
  h.train_accuracy = c.tensor("bias_accuracy")(0, 1);
  return h;
}

Container to_container(const LatentWorld& w) {
  Container c;
  c.kind = PayloadKind::world;
  json attrs = json::array();
  for (const auto& a : w.attributes) attrs.push_back({{"name", a.name}, {"s_max", a.s_max}});
  c.meta = {{"d", w.d}, {"seed", w.seed}, {"mode", to_string(w.generator.mode)}, {"attributes", attrs}};
  MatrixXd U(w.d, static_cast<Eigen::Index>(w.attributes.size()));
  MatrixXd b(1, static_cast<Eigen::Index>(w.attributes.size()));
  for (std::size_t i = 0; i < w.attributes.size(); ++i) {
    U.col(static_cast<Eigen::Index>(i)) = w.attributes[i].u_true;
    b(0, static_cast<Eigen::Index>(i)) = w.attributes[i].bias;
  }
  c.tensors = {{"U", U}, {"attr_bias", b}, {"A", w.generator.A}, {"B", w.generator.B}, {"C", w.generator.C},
               {"gen_bias", col(w.generator.bias)}};
  return c;
}

LatentWorld world_from(const Container& c) {
  if (c.kind != PayloadKind::world) throw DataError("container is not a world");
  LatentWorld w;
  w.d = c.meta.at("d").get<int>();
  w.seed = c.meta.at("seed").get<std::uint64_t>();
  w.generator.mode = generator_mode_from_string(c.meta.at("mode").get<std::string>());
  const MatrixXd& U = c.tensor("U");
  const MatrixXd& b = c.tensor("attr_bias");
  const json& attrs = c.meta.at("attributes");
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    w.attributes.push_back({attrs[i].at("name").get<std::string>(), U.col(j), b(0, j), attrs[i].at("s_max").get<double>()});
  }
  w.generator.A = c.tensor("A");
  w.generator.B = c.tensor("B");
  w.generator.C = c.tensor("C");
  w.generator.bias = c.tensor("gen_bias").col(0);
  w.validate();
  return w;
}

Container to_container(const MorphableBasis& b) {
  Container c;
  c.kind = PayloadKind::basis;
  c.meta = {{"n_vertices", b.n_vertices}, {"landmarks", b.landmark_indices}};
  MatrixXd tri(static_cast<Eigen::Index>(b.triangles.size()), 3);
  for (std::size_t i = 0; i < b.triangles.size(); ++i)
    for (int j = 0; j < 3; ++j) tri(static_cast<Eigen::Index>(i), j) = b.triangles[i][static_cast<std::size_t>(j)];
  c.tensors = {{"mean_shape_id", col(b.mean_shape_id)},
               {"mean_shape_expr", col(b.mean_shape_expr)},
               {"mean_texture", col(b.mean_texture)},
               {"E_id", b.E_id},
               {"E_expr", b.E_expr},
               {"E_tex", b.E_tex},
               {"sigma_id", col(b.sigma_id)},
               {"sigma_expr", col(b.sigma_expr)},
               {"sigma_tex", col(b.sigma_tex)},
               {"triangles", tri}};
  return c;
}

MorphableBasis basis_from(const Container& c) {
  if (c.kind != PayloadKind::basis) throw DataError("container is not a basis");
  MorphableBasis b;
  b.n_vertices = c.meta.at("n_vertices").get<int>();
  b.landmark_indices = c.meta.at("landmarks").get<std::vector<int>>();
  b.mean_shape_id = c.tensor("mean_shape_id").col(0);
  b.mean_shape_expr = c.tensor("mean_shape_expr").col(0);
  b.mean_texture = c.tensor("mean_texture").col(0);
  b.E_id = c.tensor("E_id");
  b.E_expr = c.tensor("E_expr");
  b.E_tex = c.tensor("E_tex");
  b.sigma_id = c.tensor("sigma_id").col(0);
  b.sigma_expr = c.tensor("sigma_expr").col(0);
  b.sigma_tex = c.tensor("sigma_tex").col(0);
  const MatrixXd& tri = c.tensor("triangles");
  for (Eigen::Index i = 0; i < tri.rows(); ++i)
    b.triangles.push_back({static_cast<int>(tri(i, 0)), static_cast<int>(tri(i, 1)), static_cast<int>(tri(i, 2))});
  b.validate();
  return b;
}

Container to_container(const ReferencePopulation& r) {
  Container c;
  c.kind = PayloadKind::reference;
  c.meta = {{"seed", r.seed}, {"train_fraction", r.train_fraction}, {"attributes", r.attributes},
            {"label", "synthetic reference"}};
  c.tensors = {{"W", r.W}, {"P", r.P}, {"labels", r.labels.cast<double>()}};
  return c;
}

ReferencePopulation reference_from(const Container& c) {
  if (c.kind != PayloadKind::reference) throw DataError("container is not a reference population");
  ReferencePopulation r;
  r.seed = c.meta.at("seed").get<std::uint64_t>();
  r.train_fraction = c.meta.at("train_fraction").get<double>();
  r.attributes = c.meta.at("attributes").get<std::vector<std::string>>();
  r.W = c.tensor("W");
  r.P = c.tensor("P");
  r.labels = c.tensor("labels").cast<int>();
  if (r.W.cols() != r.P.cols() || r.labels.cols() != r.P.cols() ||
      r.labels.rows() != static_cast<Eigen::Index>(r.attributes.size()))
    throw ManifestMismatchError("reference population tensors disagree in size");
  return r;
}

void save_world(const fs::path& dir, const WorldBundle& w) {
  fs::create_directories(dir);
  save_container(dir / "world.m3dm", to_container(w.world));
  save_container(dir / "basis.m3dm", to_container(w.basis));
  json summary = {{"format_version", kContainerFormatVersion},
                  {"config", w.config},
                  {"latent_dim", w.world.d},
                  {"k_id", w.basis.k_id()},
                  {"k_expr", w.basis.k_expr()},
                  {"k_tex", w.basis.k_tex()},
                  {"n_vertices", w.basis.n_vertices},
                  {"mode", to_string(w.world.generator.mode)}};
  json attrs = json::array();
  for (const auto& a : w.world.attributes) attrs.push_back(a.name);
  summary["attributes"] = attrs;
  atomic_write(dir / "world.json", summary.dump(2) + "\n");
}

WorldBundle load_world(const fs::path& dir) {
  WorldBundle w;
  w.world = world_from(load_container(dir / "world.m3dm", PayloadKind::world));
  w.basis = basis_from(load_container(dir / "basis.m3dm", PayloadKind::basis));
  if (fs::exists(dir / "world.json")) w.config = json::parse(read_bytes(dir / "world.json")).value("config", json::object());
  if (w.world.k() != w.basis.k_flat())
    throw ManifestMismatchError("world generator emits k=" + std::to_string(w.world.k()) + " but basis has k=" +
                                std::to_string(w.basis.k_flat()));
  return w;
}

void save_reference(const fs::path& dir, const ReferencePopulation& r) {
  save_container(dir / "reference.m3dm", to_container(r));
}

ReferencePopulation load_reference(const fs::path& dir) {
  return reference_from(load_container(dir / "reference.m3dm", PayloadKind::reference));
}

void write_vector(const fs::path& file, const VectorXd& v) {
  std::string out;
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v[i]);
    out += buf;
  }
  atomic_write(file, out);
}

VectorXd read_vector(const fs::path& file) {
  std::istringstream in(read_bytes(file));
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw DataError("'" + file.string() + "': not a number: " + tok);
    vals.push_back(x);
  }
  return Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

void export_obj(const VectorXd& shape, const VectorXd& texture, const std::vector<Triangle>& triangles,
                const fs::path& file) {
  if (shape.size() % 3 != 0 || texture.size() != shape.size())
    throw ContractError("export_obj: shape and texture must both have length 3n");
  const Eigen::Index n = shape.size() / 3;
  std::string out;
  char buf[160];
  for (Eigen::Index v = 0; v < n; ++v) {
    for (int j = 0; j < 3; ++j)
      if (!std::isfinite(shape[3 * v + j]) || !std::isfinite(texture[3 * v + j]))
        throw NumericalError("export_obj: non-finite value at vertex " + std::to_string(v));
    std::snprintf(buf, sizeof buf, "v %.6g %.6g %.6g %.6g %.6g %.6g\n", shape[3 * v], shape[3 * v + 1],
                  shape[3 * v + 2], texture[3 * v], texture[3 * v + 1], texture[3 * v + 2]);
    out += buf;
  }
  for (const auto& t : triangles) {
    for (int idx : t)
      if (idx < 0 || idx >= n) throw ContractError("export_obj: triangle index " + std::to_string(idx) + " out of range");
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out += buf;
  }
  atomic_write(file, out);
}

std::vector<double> default_sweep_scores() {
  std::vector<double> s;
  for (int i = -4; i <= 4; ++i) s.push_back(0.5 * i);
  return s;
}

std::vector<fs::path> export_score_sweep(const Controller& ctrl, const VectorXd& p_src,
                                         const std::vector<double>& scores, const MorphableBasis& basis,
                                         const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (double s : scores) {
    const FaceParams fp = FaceParams::from_flat(basis, ctrl.forward(p_src, s));
    char name[96];
    std::snprintf(name, sizeof name, "%.1f", s);
    const fs::path file = dir / ("sweep_" + ctrl.attribute() + "_" + name + ".obj");
    export_obj(eval_shape(basis, fp.id, fp.expr), eval_texture(basis, fp.tex), basis.triangles, file);
    out.push_back(file);
  }
  return out;
}

std::string fingerprint(const std::string& text) { return hex16(fnv1a(text.data(), text.size())); }

void write_text(const fs::path& file, const std::string& text) { atomic_write(file, text); }

std::string read_text(const fs::path& file) { return read_bytes(file); }

std::string cv_table(const std::vector<std::string>& attributes, const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& values) {
  std::string out = "method";
  for (const auto& a : attributes) out += "\t" + a;
  out += "\n";
  char buf[32];
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out += methods[m];
    for (double v : values.at(m)) {
      std::snprintf(buf, sizeof buf, "\t%.4f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace m3dm
