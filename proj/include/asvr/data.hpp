#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace asvr::data {

enum class Glyph { circle, square, triangle, cross };
enum class Color { red, green, blue, yellow };

inline constexpr int kGlyphs = 4;
inline constexpr int kColors = 4;
inline constexpr int kClasses = kGlyphs * kColors;
inline constexpr int kGrid = 3;
inline constexpr int kCells = kGrid * kGrid;

std::string_view glyph_name(Glyph g);
std::string_view color_name(Color c);
Glyph parse_glyph(std::string_view s);
Color parse_color(std::string_view s);

struct SceneObject {
  Glyph glyph = Glyph::circle;
  Color color = Color::red;
  int cell = 0;  // row-major position on the 3x3 layout

  // (shape, color) class in [0, 16).
  int class_id() const { return static_cast<int>(glyph) * kColors + static_cast<int>(color); }
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;

  // Throws unless 1..3 objects on distinct, in-range cells.
  void validate() const;
  // Order-independent identity of the scene content.
  std::string signature() const;
  std::vector<int> class_ids() const;
  int count_glyph(Glyph g) const;
};

// H x W x 3, values in [0, 1], row-major with interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

// White background, each object in its own cell with its pure color. Object
// size and offset vary with the scene content but never leave the cell.
Image render(const Scene& scene, std::size_t image_px = 48);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kBoi = 3;
  static constexpr int kEoi = 4;
  static constexpr int kSep = 5;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> words);
  // Specials followed by every word the templates can emit.
  static Vocab standard();

  int size() const { return static_cast<int>(words_.size()); }
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  bool contains(std::string_view word) const;
  const std::vector<std::string>& words() const { return words_; }
  // FNV-1a over the ordered words; identifies a vocabulary in checkpoints.
  std::uint32_t fingerprint() const;

  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

struct QaPair {
  std::string question;
  std::string answer;
};

enum class QuestionKind { color, count, existence };
QuestionKind question_kind(std::string_view question);

std::string caption_text(const Scene& scene);
// Color questions for shapes present exactly once, one count question, and
// one yes plus one no existence question.
std::vector<QaPair> qa_templates(const Scene& scene);

struct TokenizedQa {
  std::vector<int> question;
  std::vector<int> answer;
};

struct Sample {
  std::string id;
  std::string image_file;  // relative to the split directory
  Image image;
  std::string caption;
  std::vector<int> caption_ids;
  std::vector<QaPair> qa;
  std::vector<TokenizedQa> qa_ids;
  Scene scene;
};

struct Corpus {
  Vocab vocab;
  std::vector<Sample> train;
  std::vector<Sample> eval;
  std::size_t image_px = 48;
};

struct CorpusSpec {
  std::uint64_t seed = 7;
  std::size_t n_train = 5000;
  std::size_t n_eval = 1000;
  std::size_t image_px = 48;
};

// Pure function of the spec: one RNG stream, eval scenes redrawn to avoid
// train signatures when the scene space allows it.
Corpus generate(const CorpusSpec& spec);

// Writes vocab.json, {train,eval}/manifest.jsonl and PPM images. Returns
// the number of records written.
std::size_t write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// generate + write.
std::size_t generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

}  // namespace asvr::data
