#include "avr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

namespace {

constexpr std::string_view kAnnotationHeader = "avr-annotations";
constexpr std::uint64_t kAnnotationVersion = 1;
constexpr char kFeatureMagic[8] = {'A', 'V', 'R', 'F', 'E', 'A', 'T', '\0'};
constexpr std::uint32_t kFeatureVersion = 1;

/// Line cursor over annotation text that skips blanks and '#' comments and
/// remembers line numbers for diagnostics.
class LineReader {
 public:
  explicit LineReader(const std::string& text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      auto end = text_.find('\n', pos_);
      if (end == std::string::npos) end = text_.size();
      std::string_view raw(text_.data() + pos_, end - pos_);
      pos_ = end + 1;
      ++line_no_;
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      auto first = raw.find_first_not_of(" \t");
      if (first == std::string_view::npos || raw[first] == '#') continue;
      auto last = raw.find_last_not_of(" \t");
      line = raw.substr(first, last - first + 1);
      return true;
    }
    return false;
  }

  std::string_view expect(std::string_view what) {
    std::string_view line;
    if (!next(line)) {
      fail("unexpected end of file, expected " + std::string(what));
    }
    return line;
  }

  /// Reads "<keyword> <count>".
  std::size_t expect_count(std::string_view keyword) {
    auto fields = io::split_ws(expect(keyword));
    if (fields.size() != 2 || fields[0] != keyword) {
      fail("expected '" + std::string(keyword) + " <count>'");
    }
    return parse_count(fields[1], keyword);
  }

  std::size_t parse_count(std::string_view text, std::string_view what) {
    try {
      return static_cast<std::size_t>(io::parse_u64(text, what));
    } catch (const DataError& e) {
      fail(e.what());
    }
  }

  double parse_real(std::string_view text, std::string_view what) {
    try {
      return io::parse_double(text, what);
    } catch (const DataError& e) {
      fail(e.what());
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError("annotations line " + std::to_string(line_no_) + ": " + msg);
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::vector<std::string> read_labels(LineReader& reader, std::string_view keyword) {
  const auto n = reader.expect_count(keyword);
  std::vector<std::string> labels;
  labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels.emplace_back(reader.expect("label"));
  }
  return labels;
}

DetectedObject read_object(LineReader& reader, bool require_confidence) {
  auto fields = io::split_ws(reader.expect("object record"));
  if (fields.size() != 5 && fields.size() != 6) {
    reader.fail("object record needs 'x y w h class_index [confidence]'");
  }
  if (require_confidence && fields.size() != 6) {
    reader.fail("detection record needs a confidence");
  }
  const double x = reader.parse_real(fields[0], "x");
  const double y = reader.parse_real(fields[1], "y");
  const double w = reader.parse_real(fields[2], "w");
  const double h = reader.parse_real(fields[3], "h");
  const auto cls = reader.parse_count(fields[4], "class_index");
  const double conf = fields.size() == 6 ? reader.parse_real(fields[5], "confidence") : 1.0;
  try {
    return DetectedObject{BoundingBox(x, y, w, h), cls, conf};
  } catch (const std::invalid_argument& e) {
    reader.fail(e.what());
  }
}

void format_object(std::ostringstream& out, const DetectedObject& obj, bool with_confidence) {
  out << io::format_double(obj.box.x()) << ' ' << io::format_double(obj.box.y()) << ' '
      << io::format_double(obj.box.w()) << ' ' << io::format_double(obj.box.h()) << ' '
      << obj.class_index;
  if (with_confidence) out << ' ' << io::format_double(obj.confidence);
  out << '\n';
}

void check_object(const DetectedObject& obj, const Vocabulary& vocab, const std::string& where) {
  if (obj.class_index >= vocab.num_objects()) {
    throw DataError(where + ": class index " + std::to_string(obj.class_index) +
                    " out of range for " + std::to_string(vocab.num_objects()) +
                    " object labels");
  }
  if (!(obj.confidence > 0.0) || obj.confidence > 1.0) {
    throw DataError(where + ": confidence must lie in (0, 1]");
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> object_labels,
                       std::vector<std::string> predicate_labels)
    : objects_(std::move(object_labels)), predicates_(std::move(predicate_labels)) {
  if (objects_.empty() || predicates_.empty()) {
    throw DataError("vocabulary needs at least one object label and one predicate label");
  }
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    if (objects_[i].empty() || !object_lookup_.emplace(objects_[i], i).second) {
      throw DataError("duplicate or empty object label '" + objects_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < predicates_.size(); ++i) {
    if (predicates_[i].empty() || !predicate_lookup_.emplace(predicates_[i], i).second) {
      throw DataError("duplicate or empty predicate label '" + predicates_[i] + "'");
    }
  }
}

std::optional<std::size_t> Vocabulary::object_index(const std::string& label) const {
  auto it = object_lookup_.find(label);
  if (it == object_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Vocabulary::predicate_index(const std::string& label) const {
  auto it = predicate_lookup_.find(label);
  if (it == predicate_lookup_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = io::fnv1a64("objects");
  for (const auto& l : objects_) h = io::fnv1a64(std::string_view(l.c_str(), l.size() + 1), h);
  h = io::fnv1a64("predicates", h);
  for (const auto& l : predicates_) h = io::fnv1a64(std::string_view(l.c_str(), l.size() + 1), h);
  return h;
}

void validate(const Dataset& dataset) {
  const auto& vocab = dataset.vocab;
  std::set<std::string> ids;
  for (const auto& img : dataset.images) {
    const std::string where = "image '" + img.image_id + "'";
    if (img.image_id.empty() || img.image_id.find_first_of(" \t\n") != std::string::npos) {
      throw DataError(where + ": image ids must be non-empty and contain no whitespace");
    }
    if (!ids.insert(img.image_id).second) {
      throw DataError("duplicate image_id '" + img.image_id + "'");
    }
    for (const auto& obj : img.objects) {
      check_object(obj, vocab, where);
    }
    if (img.detections) {
      for (const auto& det : *img.detections) check_object(det, vocab, where + " detection");
    }
    for (const auto& rel : img.relationships) {
      if (rel.subject >= img.objects.size() || rel.object >= img.objects.size()) {
        throw DataError(where + ": dangling index in relationship (" +
                        std::to_string(rel.subject) + ", " + std::to_string(rel.predicate) +
                        ", " + std::to_string(rel.object) + "); image has " +
                        std::to_string(img.objects.size()) + " objects");
      }
      if (rel.subject == rel.object) {
        throw DataError(where + ": relationship subject and object are the same object");
      }
      if (rel.predicate >= vocab.num_predicates()) {
        throw DataError(where + ": dangling predicate index " + std::to_string(rel.predicate));
      }
    }
  }
}

Dataset parse_annotations(const std::string& text) {
  LineReader reader(text);
  {
    auto fields = io::split_ws(reader.expect("header"));
    if (fields.size() != 2 || fields[0] != kAnnotationHeader) {
      reader.fail("missing 'avr-annotations <version>' header");
    }
    if (reader.parse_count(fields[1], "version") != kAnnotationVersion) {
      reader.fail("unsupported annotation format version");
    }
  }
  Dataset ds;
  {
    auto objects = read_labels(reader, "objects");
    auto predicates = read_labels(reader, "predicates");
    try {
      ds.vocab = Vocabulary(std::move(objects), std::move(predicates));
    } catch (const DataError& e) {
      reader.fail(e.what());
    }
  }
  const auto n_images = reader.expect_count("images");
  ds.images.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    auto head = io::split_ws(reader.expect("image record"));
    if (head.size() != 4 || head[0] != "image") {
      reader.fail("expected 'image <id> <W> <H>'");
    }
    std::optional<ImageDims> dims;
    try {
      dims.emplace(reader.parse_real(head[2], "W"), reader.parse_real(head[3], "H"));
    } catch (const std::invalid_argument& e) {
      reader.fail(e.what());
    }
    AnnotatedImage img{std::string(head[1]), *dims, {}, {}, std::nullopt};
    const auto n_obj = reader.expect_count("objects");
    for (std::size_t k = 0; k < n_obj; ++k) img.objects.push_back(read_object(reader, false));
    const auto n_rel = reader.expect_count("relationships");
    for (std::size_t k = 0; k < n_rel; ++k) {
      auto f = io::split_ws(reader.expect("relationship record"));
      if (f.size() != 3) reader.fail("relationship record needs 's_idx pred_idx o_idx'");
      img.relationships.push_back(Relationship{reader.parse_count(f[0], "s_idx"),
                                               reader.parse_count(f[1], "pred_idx"),
                                               reader.parse_count(f[2], "o_idx")});
    }
    auto tail = io::split_ws(reader.expect("'detections <n>' or 'end'"));
    if (tail.size() == 2 && tail[0] == "detections") {
      const auto n_det = reader.parse_count(tail[1], "detections");
      std::vector<DetectedObject> dets;
      for (std::size_t k = 0; k < n_det; ++k) dets.push_back(read_object(reader, true));
      img.detections = std::move(dets);
      tail = io::split_ws(reader.expect("'end'"));
    }
    if (tail.size() != 1 || tail[0] != "end") {
      reader.fail("expected 'end' closing image '" + img.image_id + "'");
    }
    ds.images.push_back(std::move(img));
  }
  std::string_view extra;
  if (reader.next(extra)) {
    reader.fail("unexpected content after last image");
  }
  validate(ds);
  return ds;
}

Dataset load_annotations(const std::string& path) {
  return parse_annotations(io::read_file(path));
}

std::string format_annotations(const Dataset& ds) {
  validate(ds);
  std::ostringstream out;
  out << kAnnotationHeader << ' ' << kAnnotationVersion << '\n';
  out << "objects " << ds.vocab.num_objects() << '\n';
  for (const auto& l : ds.vocab.objects()) out << l << '\n';
  out << "predicates " << ds.vocab.num_predicates() << '\n';
  for (const auto& l : ds.vocab.predicates()) out << l << '\n';
  out << "images " << ds.images.size() << '\n';
  for (const auto& img : ds.images) {
    out << "image " << img.image_id << ' ' << io::format_double(img.dims.width) << ' '
        << io::format_double(img.dims.height) << '\n';
    out << "objects " << img.objects.size() << '\n';
    for (const auto& obj : img.objects) format_object(out, obj, obj.confidence != 1.0);
    out << "relationships " << img.relationships.size() << '\n';
    for (const auto& r : img.relationships) {
      out << r.subject << ' ' << r.predicate << ' ' << r.object << '\n';
    }
    if (img.detections) {
      out << "detections " << img.detections->size() << '\n';
      for (const auto& det : *img.detections) format_object(out, det, true);
    }
    out << "end\n";
  }
  return out.str();
}

void save_annotations(const std::string& path, const Dataset& ds) {
  io::write_file(path, format_annotations(ds));
}

const Vector& EmbeddingTable::at(const std::string& label) const {
  auto it = vectors.find(label);
  if (it == vectors.end()) {
    throw DataError("no embedding for label '" + label + "'");
  }
  return it->second;
}

EmbeddingTable parse_embeddings(const std::string& text, const Vocabulary& vocab) {
  std::set<std::string> wanted;
  for (const auto& label : vocab.objects()) {
    for (auto tok : io::split_ws(label)) wanted.emplace(tok);
  }

  std::map<std::string, Vector> tokens;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = io::split_ws(line);
    if (fields.empty()) continue;
    const std::size_t d = fields.size() - 1;
    if (d == 0) {
      throw DataError("embeddings line " + std::to_string(line_no) + ": token without values");
    }
    if (dim == 0) {
      dim = d;
    } else if (d != dim) {
      throw DataError("embeddings line " + std::to_string(line_no) + ": dimension " +
                      std::to_string(d) + " differs from " + std::to_string(dim));
    }
    std::string token(fields[0]);
    if (!wanted.count(token) || tokens.count(token)) continue;
    Vector v(d);
    for (std::size_t i = 0; i < d; ++i) {
      v[i] = io::parse_double(fields[i + 1],
                              "embedding value on line " + std::to_string(line_no));
    }
    tokens.emplace(std::move(token), std::move(v));
  }

  EmbeddingTable table;
  table.dimension = dim;
  std::vector<std::string> missing;
  for (const auto& label : vocab.objects()) {
    auto parts = io::split_ws(label);
    Vector acc(dim, 0.0);
    bool covered = !parts.empty();
    for (auto tok : parts) {
      auto it = tokens.find(std::string(tok));
      if (it == tokens.end()) {
        covered = false;
        break;
      }
      add_to(acc, it->second);
    }
    if (!covered) {
      missing.push_back(label);
      continue;
    }
    for (double& x : acc) x /= static_cast<double>(parts.size());
    table.vectors.emplace(label, std::move(acc));
  }
  if (!missing.empty()) {
    std::string msg = "embeddings do not cover " + std::to_string(missing.size()) + " label(s):";
    for (const auto& m : missing) msg += " '" + m + "'";
    throw DataError(msg);
  }
  return table;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab) {
  return parse_embeddings(io::read_file(path), vocab);
}

std::string format_embeddings(const EmbeddingTable& table) {
  std::ostringstream out;
  for (const auto& [label, v] : table.vectors) {
    if (label.find_first_of(" \t") != std::string::npos) {
      throw DataError("cannot write multi-word label '" + label + "' as a single token");
    }
    if (v.size() != table.dimension) {
      throw DataError("embedding for '" + label + "' has the wrong dimension");
    }
    out << label;
    for (double x : v) out << ' ' << io::format_double(x);
    out << '\n';
  }
  return out.str();
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  io::write_file(path, format_embeddings(table));
}

const ImageFeatures& FeatureBundle::image(const std::string& image_id) const {
  auto it = images.find(image_id);
  if (it == images.end()) {
    throw DataError("feature bundle has no entry for image '" + image_id + "'");
  }
  return it->second;
}

const std::vector<float>& FeatureBundle::pair(const std::string& image_id, PairKey key) const {
  const auto& img = image(image_id);
  auto it = img.pairs.find(key);
  if (it == img.pairs.end()) {
    throw DataError("feature bundle has no " +
                    std::string(key.source == PairSource::kGroundTruth ? "ground-truth"
                                                                       : "detection") +
                    " pair (" + std::to_string(key.subject) + ", " +
                    std::to_string(key.object) + ") for image '" + image_id + "'");
  }
  return it->second;
}

std::string serialize_features(const FeatureBundle& bundle) {
  std::ostringstream out(std::ios::binary);
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  io::write_u32(out, kFeatureVersion);
  io::write_u32(out, static_cast<std::uint32_t>(bundle.visual_dim));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.global_dim));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.images.size()));
  for (const auto& [id, img] : bundle.images) {
    if (img.global.size() != bundle.global_dim) {
      throw DataError("global feature of image '" + id + "' has the wrong dimension");
    }
    io::write_string(out, id);
    for (float v : img.global) io::write_f32(out, v);
    io::write_u32(out, static_cast<std::uint32_t>(img.pairs.size()));
    for (const auto& [key, vec] : img.pairs) {
      if (vec.size() != bundle.visual_dim) {
        throw DataError("pair feature of image '" + id + "' has the wrong dimension");
      }
      io::write_u8(out, static_cast<std::uint8_t>(key.source));
      io::write_u32(out, key.subject);
      io::write_u32(out, key.object);
      for (float v : vec) io::write_f32(out, v);
    }
  }
  return out.str();
}

FeatureBundle deserialize_features(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[sizeof(kFeatureMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      !std::equal(std::begin(magic), std::end(magic), std::begin(kFeatureMagic))) {
    throw DataError("not a feature bundle (bad magic)");
  }
  const auto version = io::read_u32(in);
  if (version != kFeatureVersion) {
    throw DataError("unsupported feature bundle version " + std::to_string(version));
  }
  FeatureBundle bundle;
  bundle.visual_dim = io::read_u32(in);
  bundle.global_dim = io::read_u32(in);
  const auto n_images = io::read_u32(in);
  auto read_vec = [&](std::size_t n) {
    if (n * sizeof(float) > bytes.size()) throw DataError("feature record larger than file");
    std::vector<float> v(n);
    for (auto& x : v) {
      x = io::read_f32(in);
      if (!std::isfinite(x)) throw DataError("feature bundle holds a non-finite value");
    }
    return v;
  };
  for (std::uint32_t i = 0; i < n_images; ++i) {
    auto id = io::read_string(in);
    ImageFeatures img;
    img.global = read_vec(bundle.global_dim);
    const auto n_pairs = io::read_u32(in);
    for (std::uint32_t p = 0; p < n_pairs; ++p) {
      const auto source = io::read_u8(in);
      if (source > 1) throw DataError("feature bundle pair has unknown source tag");
      PairKey key{static_cast<PairSource>(source), io::read_u32(in), io::read_u32(in)};
      if (!img.pairs.emplace(key, read_vec(bundle.visual_dim)).second) {
        throw DataError("duplicate pair record in feature bundle for image '" + id + "'");
      }
    }
    if (!bundle.images.emplace(id, std::move(img)).second) {
      throw DataError("duplicate image '" + id + "' in feature bundle");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes after feature bundle payload");
  }
  return bundle;
}

void save_features(const std::string& path, const FeatureBundle& bundle) {
  io::write_file(path, serialize_features(bundle));
}

FeatureBundle load_features(const std::string& path) {
  return deserialize_features(io::read_file(path));
}

SynthRule parse_synth_rule(const std::string& name) {
  if (name == "spatial-only") return SynthRule::kSpatialOnly;
  if (name == "salient") return SynthRule::kSalient;
  if (name == "pair-prior") return SynthRule::kPairPrior;
  throw std::invalid_argument("unknown synthetic rule '" + name +
                              "' (expected spatial-only, salient or pair-prior)");
}

std::string synth_rule_name(SynthRule rule) {
  switch (rule) {
    case SynthRule::kSpatialOnly:
      return "spatial-only";
    case SynthRule::kSalient:
      return "salient";
    case SynthRule::kPairPrior:
      return "pair-prior";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kNoiseLatents = 8;
constexpr double kAngleMargin = 0.3;
constexpr double kMinOffset = 0.15;

double round2(double v) { return std::round(v * 100.0) / 100.0; }

/// Direction sector of the normalized top-left offset, or nullopt when the
/// offset is too short or too close to a sector boundary to be unambiguous.
std::optional<std::size_t> offset_sector(double dx, double dy, std::size_t k) {
  if (std::hypot(dx, dy) < kMinOffset) return std::nullopt;
  const double width = 2.0 * std::numbers::pi / static_cast<double>(k);
  const double theta = std::atan2(dy, dx) + std::numbers::pi;
  const double pos = theta / width;
  const double frac = pos - std::floor(pos);
  if (std::min(frac, 1.0 - frac) * width < kAngleMargin) return std::nullopt;
  return static_cast<std::size_t>(std::floor(pos)) % k;
}

struct PairLatent {
  std::size_t predicate;
  bool salient;
};

struct World {
  Matrix visual_map;  // visual_dim x latent
  Matrix global_map;  // global_dim x num_objects
  std::vector<std::vector<std::size_t>> pair_table;
  double predicate_signal;
  double salience_signal = 2.0;
  double noise_scale;
};

std::vector<float> visual_feature(const World& w, const SynthConfig& cfg, PairLatent latent,
                                  Rng& rng) {
  const std::size_t k = cfg.num_predicates;
  Vector z(k + 1 + kNoiseLatents, 0.0);
  z[latent.predicate] = w.predicate_signal;
  z[k] = latent.salient ? w.salience_signal : 0.0;
  for (std::size_t i = 0; i < kNoiseLatents; ++i) z[k + 1 + i] = w.noise_scale * rng.normal();
  Vector out(cfg.visual_dim, 0.0);
  add_matvec(out, w.visual_map, z);
  return {out.begin(), out.end()};
}

DetectedObject jitter(const DetectedObject& obj, const ImageDims& dims, Rng& rng) {
  const auto& b = obj.box;
  const double w = round2(b.w() * rng.uniform(0.95, 1.05));
  const double h = round2(b.h() * rng.uniform(0.95, 1.05));
  const double x = round2(std::clamp(b.x() + b.w() * rng.uniform(-0.04, 0.04), 0.0, dims.width));
  const double y = round2(std::clamp(b.y() + b.h() * rng.uniform(-0.04, 0.04), 0.0, dims.height));
  return DetectedObject{BoundingBox(x, y, w, h), obj.class_index, round2(rng.uniform(0.6, 1.0))};
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.num_objects < 1 || cfg.num_predicates < 1) {
    throw std::invalid_argument("synthetic vocabulary sizes must be at least 1");
  }
  if (cfg.min_objects_per_image < 2 || cfg.max_objects_per_image < cfg.min_objects_per_image) {
    throw std::invalid_argument("synthetic images need at least two objects");
  }
  Rng rng(cfg.seed);
  const std::size_t n = cfg.num_objects;
  const std::size_t k = cfg.num_predicates;

  std::vector<std::string> object_labels;
  std::vector<std::string> predicate_labels;
  for (std::size_t i = 0; i < n; ++i) object_labels.push_back("obj" + std::to_string(i));
  for (std::size_t i = 0; i < k; ++i) predicate_labels.push_back("pred" + std::to_string(i));

  SynthDataset out;
  out.dataset.vocab = Vocabulary(object_labels, predicate_labels);

  out.embeddings.dimension = cfg.embedding_dim;
  for (const auto& label : object_labels) {
    Vector v(cfg.embedding_dim);
    for (double& x : v) x = static_cast<double>(static_cast<float>(rng.normal()));
    out.embeddings.vectors.emplace(label, std::move(v));
  }

  World world;
  const std::size_t latent_dim = k + 1 + kNoiseLatents;
  world.visual_map = Matrix(cfg.visual_dim, latent_dim);
  for (double& x : world.visual_map.values()) {
    x = rng.normal() / std::sqrt(static_cast<double>(latent_dim));
  }
  world.global_map = Matrix(cfg.global_dim, n);
  for (double& x : world.global_map.values()) x = rng.normal();
  world.pair_table.assign(n, std::vector<std::size_t>(n, 0));
  for (auto& row : world.pair_table) {
    for (auto& p : row) p = rng.below(k);
  }
  switch (cfg.rule) {
    case SynthRule::kSpatialOnly:
      world.predicate_signal = 0.0;
      world.noise_scale = 0.5;
      break;
    case SynthRule::kSalient:
      world.predicate_signal = 2.0;
      world.noise_scale = 0.5;
      break;
    case SynthRule::kPairPrior:
      world.predicate_signal = 0.5;
      world.noise_scale = 1.0;
      break;
  }

  out.features.visual_dim = cfg.visual_dim;
  out.features.global_dim = cfg.global_dim;

  for (std::size_t img_idx = 0; img_idx < cfg.n_images; ++img_idx) {
    const ImageDims dims(std::round(rng.uniform(320.0, 640.0)), std::round(rng.uniform(320.0, 640.0)));
    AnnotatedImage img{"img" + std::to_string(img_idx), dims, {}, {}, std::nullopt};
    const std::size_t n_obj =
        cfg.min_objects_per_image +
        rng.below(cfg.max_objects_per_image - cfg.min_objects_per_image + 1);
    for (std::size_t j = 0; j < n_obj; ++j) {
      const double w = round2(dims.width * rng.uniform(0.08, 0.3));
      const double h = round2(dims.height * rng.uniform(0.08, 0.3));
      const double x = round2(rng.uniform(0.0, dims.width - w));
      const double y = round2(rng.uniform(0.0, dims.height - h));
      img.objects.push_back(DetectedObject{BoundingBox(x, y, w, h), rng.below(n), 1.0});
    }

    std::vector<std::pair<std::size_t, std::size_t>> ordered;
    for (std::size_t s = 0; s < n_obj; ++s) {
      for (std::size_t o = 0; o < n_obj; ++o) {
        if (s != o) ordered.emplace_back(s, o);
      }
    }
    rng.shuffle(ordered);

    std::map<std::pair<std::size_t, std::size_t>, PairLatent> latents;
    const auto fraction_quota = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.annotated_fraction *
                                                 static_cast<double>(ordered.size()))));
    for (const auto& [s, o] : ordered) {
      const auto& bs = img.objects[s];
      const auto& bo = img.objects[o];
      std::optional<std::size_t> predicate;
      switch (cfg.rule) {
        case SynthRule::kSpatialOnly:
          if (img.relationships.size() < cfg.max_relationships) {
            predicate = offset_sector((bs.box.x() - bo.box.x()) / dims.width,
                                      (bs.box.y() - bo.box.y()) / dims.height, k);
          }
          break;
        case SynthRule::kSalient:
          if (img.relationships.size() < fraction_quota) predicate = rng.below(k);
          break;
        case SynthRule::kPairPrior:
          if (img.relationships.size() < std::min(fraction_quota, cfg.max_relationships)) {
            predicate = rng.uniform() < cfg.label_noise
                            ? rng.below(k)
                            : world.pair_table[bs.class_index][bo.class_index];
          }
          break;
      }
      if (predicate) {
        img.relationships.push_back(Relationship{s, *predicate, o});
        latents[{s, o}] = PairLatent{*predicate, true};
      } else {
        latents[{s, o}] = PairLatent{static_cast<std::size_t>(rng.below(k)), false};
      }
    }
    std::sort(img.relationships.begin(), img.relationships.end(),
              [](const Relationship& a, const Relationship& b) {
                return std::tie(a.subject, a.object, a.predicate) <
                       std::tie(b.subject, b.object, b.predicate);
              });

    std::vector<DetectedObject> dets;
    for (const auto& obj : img.objects) dets.push_back(jitter(obj, dims, rng));

    ImageFeatures feats;
    Vector hist(n, 0.0);
    for (const auto& obj : img.objects) hist[obj.class_index] += 1.0 / static_cast<double>(n_obj);
    Vector global(cfg.global_dim, 0.0);
    add_matvec(global, world.global_map, hist);
    for (double& g : global) g += 0.1 * rng.normal();
    feats.global.assign(global.begin(), global.end());
    for (const auto& [key, latent] : latents) {
      const auto s = static_cast<std::uint32_t>(key.first);
      const auto o = static_cast<std::uint32_t>(key.second);
      feats.pairs.emplace(PairKey{PairSource::kGroundTruth, s, o},
                          visual_feature(world, cfg, latent, rng));
      feats.pairs.emplace(PairKey{PairSource::kDetection, s, o},
                          visual_feature(world, cfg, latent, rng));
    }
    img.detections = std::move(dets);
    out.features.images.emplace(img.image_id, std::move(feats));
    out.dataset.images.push_back(std::move(img));
  }
  validate(out.dataset);
  return out;
}

std::pair<SynthDataset, SynthDataset> split_dataset(const SynthDataset& data, std::size_t n_test) {
  const auto& images = data.dataset.images;
  n_test = std::min(n_test, images.size());
  const std::size_t n_train = images.size() - n_test;
  SynthDataset train{{data.dataset.vocab, {}}, {}, data.embeddings};
  SynthDataset test{{data.dataset.vocab, {}}, {}, data.embeddings};
  for (auto* part : {&train, &test}) {
    part->features.visual_dim = data.features.visual_dim;
    part->features.global_dim = data.features.global_dim;
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& part = i < n_train ? train : test;
    part.dataset.images.push_back(images[i]);
    part.features.images.emplace(images[i].image_id, data.features.image(images[i].image_id));
  }
  return {std::move(train), std::move(test)};
}

}  // namespace avr
