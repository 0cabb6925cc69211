#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance suites.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <boost/multiprecision/float128.hpp>

#include "pmt2i/cli.hpp"
#include "pmt2i/evalharness.hpp"
#include "pmt2i/mock.hpp"
#include "pmt2i/pipeline.hpp"
#include "pmt2i/prompt.hpp"
#include "pmt2i/rerank.hpp"

#ifndef PMT2I_TEST_DATA_DIR
#define PMT2I_TEST_DATA_DIR "tests"
#endif

namespace testsupport {

namespace fs = std::filesystem;
using pmt2i::json;

inline fs::path data_dir() { return fs::path(PMT2I_TEST_DATA_DIR); }

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("pmt2i-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Oracles.

/// Every nonempty ordered subset of {0..n-1}, by explicit enumeration.
inline std::vector<std::vector<std::size_t>> brute_force_variants(std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) subset.push_back(i);
    }
    do {
      out.push_back(subset);
    } while (std::next_permutation(subset.begin(), subset.end()));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  return out;
}

using Quad = boost::multiprecision::float128;

inline Quad cosine_quad(const std::vector<double>& u, const std::vector<double>& v) {
  Quad dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += Quad(u[i]) * Quad(v[i]);
    uu += Quad(u[i]) * Quad(u[i]);
    vv += Quad(v[i]) * Quad(v[i]);
  }
  return dot / (boost::multiprecision::sqrt(uu) * boost::multiprecision::sqrt(vv));
}

inline std::size_t argmax_first(const std::vector<Quad>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = normal(rng);
  return v;
}

/// Mean pairwise absolute difference over images that already share a shape.
inline double brute_force_l1(const std::vector<pmt2i::Image>& images) {
  double total = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      double sum = 0;
      for (std::size_t p = 0; p < images[i].pixels.size(); ++p) {
        sum += std::abs(double(images[i].pixels[p]) - double(images[j].pixels[p])) / 255.0;
      }
      total += sum / double(images[i].pixels.size());
      ++pairs;
    }
  }
  return total / pairs;
}

// ---------------------------------------------------------------------------
// Planted mock run: 5 samples, languages de/fr/es, seeds 1 and 2. For each
// sample one (language order, seed) candidate gets an image embedding equal
// to the caption embedding; every other candidate gets a strictly worse one.

struct PlantedTarget {
  std::vector<std::pair<std::string, std::string>> lines;  // (name, code) in prompt order
  std::string label;                                       // expected variant rank
  std::int64_t seed;
};

inline const std::vector<std::string>& planted_captions() {
  static const std::vector<std::string> c{"a red cube on a blue sphere", "two dogs playing chess",
                                          "a teapot shaped like a whale", "snow on a desert dune",
                                          "a violin made of glass"};
  return c;
}

// Ranks for languages (de, fr, es): singles 0..2, pairs 3..8, triples 9..14.
inline const std::vector<PlantedTarget>& planted_targets() {
  static const std::vector<PlantedTarget> t{
      {{{"French", "fr"}, {"German", "de"}}, "5", 2},
      {{{"Spanish", "es"}}, "2", 1},
      {{{"German", "de"}, {"French", "fr"}, {"Spanish", "es"}}, "9", 2},
      {{{"Spanish", "es"}, {"French", "fr"}, {"German", "de"}}, "14", 1},
      {{{"German", "de"}}, "0", 1},
  };
  return t;
}

inline std::string planted_prompt(std::size_t sample) {
  const auto& caption = planted_captions()[sample];
  std::string out = "English: " + caption;
  for (const auto& [name, code] : planted_targets()[sample].lines) {
    out += "\n" + name + ": «" + code + "» " + caption;
  }
  return out;
}

inline std::string planted_dataset() {
  std::string out;
  for (std::size_t i = 0; i < planted_captions().size(); ++i) {
    out += json{{"id", "s" + std::to_string(i)}, {"text", planted_captions()[i]}}.dump() + "\n";
  }
  return out;
}

/// Resets the named registry mock and installs the planted embeddings.
inline std::shared_ptr<pmt2i::MockBackend> install_planted_mock(const std::string& name) {
  auto mock = pmt2i::MockRegistry::instance().reset(name);
  const std::size_t dim = mock->options().dim;
  std::vector<double> axis(dim, 0.0);
  axis[0] = 1.0;
  mock->set_text_embedding_hook([axis](const std::string&) { return std::optional(axis); });
  mock->set_image_embedding_hook(
      [axis, dim](const std::string& sha, const std::optional<pmt2i::MockImageOrigin>& origin)
          -> std::optional<std::vector<double>> {
        if (!origin) return std::nullopt;
        for (std::size_t s = 0; s < planted_captions().size(); ++s) {
          if (origin->prompt == planted_prompt(s) && origin->seed == planted_targets()[s].seed) {
            return axis;
          }
        }
        // Strictly below cosine 1: a fixed share of the caption axis plus noise.
        auto v = pmt2i::hash_vector("off:" + sha, dim);
        v[0] = 0.0;
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (auto& x : v) x = 0.8 * x / norm;
        v[0] = 0.6;
        return v;
      });
  return mock;
}

inline pmt2i::RunConfig planted_config(const fs::path& dataset, const fs::path& out,
                                       const std::string& mock_name) {
  pmt2i::RunConfig config;
  config.dataset_path = dataset.string();
  config.languages = {"de", "fr", "es"};
  config.seeds = {1, 2};
  config.image = {32, 32};
  config.output_dir = out.string();
  for (const auto& cap : {"translate", "generate", "embed"}) {
    pmt2i::BackendEndpoint e;
    e.base_url = "mock://" + mock_name;
    e.retry.base_backoff_s = 0.001;
    config.endpoints[cap] = e;
  }
  return config;
}

inline pmt2i::Backends backends_for(const pmt2i::RunConfig& config) {
  return pmt2i::Backends::from_routing(config.endpoints, std::make_shared<pmt2i::ResponseCache>());
}

/// run_cli with captured streams.
struct CliResult {
  int code;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = pmt2i::cli::run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace testsupport
