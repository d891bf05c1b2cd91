#include "llmmap/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace llmmap {

namespace {

std::string compose(const std::string& module, const std::string& message, const std::string& file,
                    const std::string& record) {
  std::string out = module + ": " + message;
  if (!file.empty()) out += " [file: " + file + "]";
  if (!record.empty()) out += " [record: " + record + "]";
  return out;
}

}  // namespace

Error::Error(std::string module, std::string message, std::string file, std::string record)
    : std::runtime_error(compose(module, message, file, record)),
      module_(std::move(module)),
      detail_(std::move(message)),
      file_(std::move(file)),
      record_(std::move(record)) {}

std::string_view to_string(Concept c) {
  switch (c) {
    case Concept::age: return "age";
    case Concept::symptoms: return "symptoms";
    case Concept::diseases: return "diseases";
    case Concept::progression: return "progression";
    case Concept::drugs: return "drugs";
    case Concept::dosages: return "dosages";
  }
  return "?";
}

std::string_view to_string(Analysis a) {
  switch (a) {
    case Analysis::umap: return "umap";
    case Analysis::saliency: return "saliency";
    case Analysis::lesioning: return "lesioning";
    case Analysis::patching: return "patching";
  }
  return "?";
}

std::string_view to_string(SeriesKind k) {
  switch (k) {
    case SeriesKind::umap_silhouette: return "umap_silhouette";
    case SeriesKind::umap_anisotropy: return "umap_anisotropy";
    case SeriesKind::saliency: return "saliency";
    case SeriesKind::lesioning: return "lesioning";
    case SeriesKind::patching: return "patching";
  }
  return "?";
}

Concept parse_concept(std::string_view name) {
  for (Concept c : kAllConcepts)
    if (to_string(c) == name) return c;
  throw Error("prompt-forge", "unknown concept '" + std::string(name) + "'");
}

Analysis parse_analysis(std::string_view name) {
  for (Analysis a : kAllAnalyses)
    if (to_string(a) == name) return a;
  // CLI spellings
  if (name == "lesion") return Analysis::lesioning;
  if (name == "patch") return Analysis::patching;
  throw Error("prompt-forge", "unknown analysis '" + std::string(name) + "'");
}

SeriesKind parse_series_kind(std::string_view name) {
  for (SeriesKind k : {SeriesKind::umap_silhouette, SeriesKind::umap_anisotropy, SeriesKind::saliency,
                       SeriesKind::lesioning, SeriesKind::patching})
    if (to_string(k) == name) return k;
  throw Error("geometry-metrics", "unknown series analysis '" + std::string(name) + "'");
}

std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(base) ^ (stream * 0xD1B54A32D192ED03ULL + 1));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) noexcept {
  // FNV-1a over the stream name
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(base, h);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error("stats", "percentile of an empty sample");
  if (!(p >= 0.0 && p <= 100.0)) throw Error("stats", "percentile rank must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  jobs = std::max(1u, jobs);
  if (jobs == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(jobs, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace llmmap
