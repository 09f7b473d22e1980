#include "asvr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace asvr::data {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, kGlyphs> kGlyphNames{"circle", "square", "triangle", "cross"};
constexpr std::array<std::string_view, kColors> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, kCells> kCellNames{
    "top left", "top", "top right", "left", "center", "right",
    "bottom left", "bottom", "bottom right"};
constexpr std::array<std::string_view, 4> kNumberWords{"zero", "one", "two", "three"};

constexpr std::array<std::array<double, 3>, kColors> kRgb{{
    {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 0.0}}};

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string_view glyph_name(Glyph g) { return kGlyphNames.at(static_cast<std::size_t>(g)); }
std::string_view color_name(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }

Glyph parse_glyph(std::string_view s) {
  for (int i = 0; i < kGlyphs; ++i)
    if (kGlyphNames[i] == s) return static_cast<Glyph>(i);
  throw std::invalid_argument("unknown shape '" + std::string(s) + "'");
}

Color parse_color(std::string_view s) {
  for (int i = 0; i < kColors; ++i)
    if (kColorNames[i] == s) return static_cast<Color>(i);
  throw std::invalid_argument("unknown color '" + std::string(s) + "'");
}

void Scene::validate() const {
  if (objects.empty() || objects.size() > 3) {
    throw std::invalid_argument("scene: object count " +
                                std::to_string(objects.size()) + " not in [1,3]");
  }
  std::set<int> cells;
  for (const auto& o : objects) {
    if (o.cell < 0 || o.cell >= kCells) {
      throw std::invalid_argument("scene: cell " + std::to_string(o.cell) + " out of range");
    }
    if (!cells.insert(o.cell).second) {
      throw std::invalid_argument("scene: cell " + std::to_string(o.cell) + " used twice");
    }
  }
}

std::string Scene::signature() const {
  std::vector<std::string> parts;
  for (const auto& o : objects) {
    parts.push_back(std::to_string(o.cell) + ":" + std::string(color_name(o.color)) +
                    "-" + std::string(glyph_name(o.glyph)));
  }
  std::sort(parts.begin(), parts.end());
  std::string sig;
  for (const auto& p : parts) sig += p + ";";
  return sig;
}

std::vector<int> Scene::class_ids() const {
  std::vector<int> out;
  for (const auto& o : objects) out.push_back(o.class_id());
  return out;
}

int Scene::count_glyph(Glyph g) const {
  return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                        [g](const SceneObject& o) { return o.glyph == g; }));
}

Image render(const Scene& scene, std::size_t image_px) {
  scene.validate();
  if (image_px % kGrid != 0) {
    throw std::invalid_argument("render: image size " + std::to_string(image_px) +
                                " not divisible by the 3x3 layout");
  }
  Image img{image_px, image_px, std::vector<double>(image_px * image_px * 3, 1.0)};
  const std::size_t cell_px = image_px / kGrid;
  if (cell_px < 8) throw std::invalid_argument("render: cells smaller than 8 px");
  const std::uint64_t scene_hash = fnv1a(scene.signature());
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const SceneObject& o = scene.objects[k];
    std::uint64_t h = fnv1a(std::to_string(k), scene_hash);
    // Side in [5/8, 7/8] of the cell, leaving at least one pixel of margin.
    const std::size_t lo = (cell_px * 5) / 8;
    const std::size_t hi = std::max(lo, std::min((cell_px * 7) / 8, cell_px - 2));
    const std::size_t side = lo + (h % (hi - lo + 1));
    h /= 17;
    const std::size_t slack = cell_px - side - 2;
    const std::size_t ox = 1 + (slack ? h % (slack + 1) : 0);
    h /= 13;
    const std::size_t oy = 1 + (slack ? h % (slack + 1) : 0);
    const std::size_t x0 = static_cast<std::size_t>(o.cell % kGrid) * cell_px + ox;
    const std::size_t y0 = static_cast<std::size_t>(o.cell / kGrid) * cell_px + oy;
    const double s = static_cast<double>(side);
    const double arm = std::max(4.0, std::round(s / 3.0));
    for (std::size_t v = 0; v < side; ++v) {
      for (std::size_t u = 0; u < side; ++u) {
        const double px = static_cast<double>(u) + 0.5;
        const double py = static_cast<double>(v) + 0.5;
        const double dx = px - s / 2.0;
        const double dy = py - s / 2.0;
        bool inside = false;
        switch (o.glyph) {
          case Glyph::square: inside = true; break;
          case Glyph::circle: inside = dx * dx + dy * dy <= (s / 2.0) * (s / 2.0); break;
          case Glyph::triangle: inside = std::abs(dx) <= py / 2.0; break;
          case Glyph::cross: inside = std::abs(dx) <= arm / 2.0 || std::abs(dy) <= arm / 2.0; break;
        }
        if (!inside) continue;
        const auto& rgb = kRgb[static_cast<std::size_t>(o.color)];
        for (std::size_t c = 0; c < 3; ++c)
          img.pixels[((y0 + v) * image_px + x0 + u) * 3 + c] = rgb[c];
      }
    }
  }
  return img;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || !in) {
    throw std::runtime_error(path.string() + ": not a P6 maxval-255 PPM");
  }
  in.get();
  std::string bytes(w * h * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  Image img{h, w, std::vector<double>(bytes.size())};
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.pixels[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocab: duplicate word '" + words_[i] + "'");
    }
  }
  static const std::array<std::string_view, 6> specials{"<pad>", "<bos>", "<eos>",
                                                       "<boi>", "<eoi>", "<sep>"};
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (i >= words_.size() || words_[i] != specials[i]) {
      throw std::invalid_argument("vocab: special token " + std::string(specials[i]) +
                                  " must have id " + std::to_string(i));
    }
  }
}

Vocab Vocab::standard() {
  std::vector<std::string> w{"<pad>", "<bos>", "<eos>", "<boi>", "<eoi>", "<sep>"};
  for (auto g : kGlyphNames) w.emplace_back(g);
  for (auto c : kColorNames) w.emplace_back(c);
  for (std::string s : {"a", "and", "at", "top", "bottom", "left", "right", "center",
                        "what", "color", "is", "the", "how", "many", "shapes", "there",
                        "?", "yes", "no", "one", "two", "three"}) {
    w.push_back(s);
  }
  return Vocab(std::move(w));
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw std::invalid_argument("unknown word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range [0," +
                            std::to_string(size()) + ")");
  }
  return words_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

std::uint32_t Vocab::fingerprint() const {
  std::uint32_t h = 2166136261u;
  for (const auto& w : words_) {
    for (unsigned char c : w) {
      h ^= c;
      h *= 16777619u;
    }
    h ^= 0xffu;
    h *= 16777619u;
  }
  return h;
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

QuestionKind question_kind(std::string_view q) {
  if (q.starts_with("what color")) return QuestionKind::color;
  if (q.starts_with("how many")) return QuestionKind::count;
  if (q.starts_with("is there")) return QuestionKind::existence;
  throw std::invalid_argument("unrecognized question '" + std::string(q) + "'");
}

std::string caption_text(const Scene& scene) {
  std::vector<SceneObject> objs = scene.objects;
  std::sort(objs.begin(), objs.end(),
            [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  std::string out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i) out += " and ";
    out += "a " + std::string(color_name(objs[i].color)) + " " +
           std::string(glyph_name(objs[i].glyph)) + " at " +
           std::string(kCellNames[static_cast<std::size_t>(objs[i].cell)]);
  }
  return out;
}

std::vector<QaPair> qa_templates(const Scene& scene) {
  scene.validate();
  std::vector<QaPair> out;
  for (int g = 0; g < kGlyphs; ++g) {
    const Glyph glyph = static_cast<Glyph>(g);
    if (scene.count_glyph(glyph) != 1) continue;
    for (const auto& o : scene.objects) {
      if (o.glyph == glyph) {
        out.push_back({"what color is the " + std::string(glyph_name(glyph)) + " ?",
                       std::string(color_name(o.color))});
      }
    }
  }
  out.push_back({"how many shapes ?", std::string(kNumberWords[scene.objects.size()])});

  std::vector<Glyph> present, absent;
  for (int g = 0; g < kGlyphs; ++g) {
    const Glyph glyph = static_cast<Glyph>(g);
    (scene.count_glyph(glyph) > 0 ? present : absent).push_back(glyph);
  }
  // One question of each polarity keeps yes/no balanced; which shape is
  // asked about follows the scene content.
  const std::uint64_t h = fnv1a(scene.signature());
  const Glyph yes = present[h % present.size()];
  const Glyph no = absent[(h / 7) % absent.size()];
  out.push_back({"is there a " + std::string(glyph_name(yes)) + " ?", "yes"});
  out.push_back({"is there a " + std::string(glyph_name(no)) + " ?", "no"});
  return out;
}

namespace {

Scene draw_scene(std::mt19937_64& rng, int first_class) {
  const int count = std::uniform_int_distribution<int>(1, 3)(rng);
  std::array<int, kCells> cells{};
  for (int i = 0; i < kCells; ++i) cells[static_cast<std::size_t>(i)] = i;
  std::shuffle(cells.begin(), cells.end(), rng);
  Scene scene;
  for (int k = 0; k < count; ++k) {
    const int cls = k == 0 ? first_class : std::uniform_int_distribution<int>(0, kClasses - 1)(rng);
    scene.objects.push_back({static_cast<Glyph>(cls / kColors),
                             static_cast<Color>(cls % kColors),
                             cells[static_cast<std::size_t>(k)]});
  }
  return scene;
}

Sample make_sample(std::string id, Scene scene, const Vocab& vocab, std::size_t image_px) {
  Sample s;
  s.id = std::move(id);
  s.image_file = "images/" + s.id + ".ppm";
  s.image = render(scene, image_px);
  s.caption = caption_text(scene);
  s.caption_ids = vocab.tokenize(s.caption);
  s.qa = qa_templates(scene);
  for (const auto& qa : s.qa) {
    s.qa_ids.push_back({vocab.tokenize(qa.question), vocab.tokenize(qa.answer)});
  }
  s.scene = std::move(scene);
  return s;
}

std::string sample_id(std::string_view split, std::size_t i) {
  std::ostringstream os;
  os << split << '-' << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

ojson record_json(const Sample& s) {
  ojson qa = ojson::array();
  for (const auto& p : s.qa) qa.push_back(ojson{{"q", p.question}, {"a", p.answer}});
  ojson scene = ojson::array();
  for (const auto& o : s.scene.objects) {
    scene.push_back(ojson{{"shape", glyph_name(o.glyph)},
                          {"color", color_name(o.color)},
                          {"cell", o.cell}});
  }
  return ojson{{"id", s.id}, {"image", s.image_file}, {"caption", s.caption},
               {"qa", qa}, {"scene", scene}};
}

void write_split(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& s : samples) {
    manifest << record_json(s).dump() << '\n';
    write_ppm(s.image, dir / s.image_file);
  }
  if (!manifest) throw std::runtime_error("failed writing " + (dir / "manifest.jsonl").string());
}

std::vector<Sample> read_split(const fs::path& dir, const Vocab& vocab) {
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.jsonl").string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    Sample s;
    s.id = rec.at("id").get<std::string>();
    s.image_file = rec.at("image").get<std::string>();
    s.caption = rec.at("caption").get<std::string>();
    s.caption_ids = vocab.tokenize(s.caption);
    for (const auto& p : rec.at("qa")) {
      s.qa.push_back({p.at("q").get<std::string>(), p.at("a").get<std::string>()});
      s.qa_ids.push_back({vocab.tokenize(s.qa.back().question),
                          vocab.tokenize(s.qa.back().answer)});
    }
    for (const auto& o : rec.at("scene")) {
      s.scene.objects.push_back({parse_glyph(o.at("shape").get<std::string>()),
                                 parse_color(o.at("color").get<std::string>()),
                                 o.at("cell").get<int>()});
    }
    s.scene.validate();
    s.image = read_ppm(dir / s.image_file);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Corpus generate(const CorpusSpec& spec) {
  if (spec.n_train == 0 || spec.n_eval == 0) {
    throw std::invalid_argument("generate: split sizes must be positive");
  }
  Corpus corpus;
  corpus.vocab = Vocab::standard();
  corpus.image_px = spec.image_px;
  std::mt19937_64 rng(spec.seed);
  std::set<std::string> train_sigs;
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    Scene scene = draw_scene(rng, static_cast<int>(i % kClasses));
    train_sigs.insert(scene.signature());
    corpus.train.push_back(make_sample(sample_id("train", i), std::move(scene),
                                       corpus.vocab, spec.image_px));
  }
  constexpr int kRedraws = 20;
  for (std::size_t i = 0; i < spec.n_eval; ++i) {
    Scene scene = draw_scene(rng, static_cast<int>(i % kClasses));
    for (int r = 0; r < kRedraws && train_sigs.count(scene.signature()); ++r) {
      scene = draw_scene(rng, static_cast<int>(i % kClasses));
    }
    corpus.eval.push_back(make_sample(sample_id("eval", i), std::move(scene),
                                      corpus.vocab, spec.image_px));
  }
  return corpus;
}

std::size_t write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream vocab(dir / "vocab.json", std::ios::binary);
    if (!vocab) throw std::runtime_error("cannot write " + (dir / "vocab.json").string());
    vocab << ojson(corpus.vocab.words()).dump() << '\n';
  }
  write_split(corpus.train, dir / "train");
  write_split(corpus.eval, dir / "eval");
  return corpus.train.size() + corpus.eval.size();
}

Corpus load_corpus(const fs::path& dir) {
  std::ifstream in(dir / "vocab.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "vocab.json").string());
  Corpus corpus;
  corpus.vocab = Vocab(nlohmann::json::parse(in).get<std::vector<std::string>>());
  corpus.train = read_split(dir / "train", corpus.vocab);
  corpus.eval = read_split(dir / "eval", corpus.vocab);
  if (!corpus.train.empty()) corpus.image_px = corpus.train.front().image.height;
  return corpus;
}

std::size_t generate_corpus(const CorpusSpec& spec, const fs::path& dir) {
  return write_corpus(generate(spec), dir);
}

}  // namespace asvr::data
