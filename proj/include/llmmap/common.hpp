#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace llmmap {

/// Row-per-point matrix used for activations and embeddings.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Concept { age, symptoms, diseases, progression, drugs, dosages };

/// Prompt-level analysis a template is written for.
enum class Analysis { umap, saliency, lesioning, patching };

/// Analysis a per-layer metric series was derived from.
enum class SeriesKind { umap_silhouette, umap_anisotropy, saliency, lesioning, patching };

std::string_view to_string(Concept c);
std::string_view to_string(Analysis a);
std::string_view to_string(SeriesKind k);

// Parsers throw llmmap::Error on unknown names.
Concept parse_concept(std::string_view name);
Analysis parse_analysis(std::string_view name);
SeriesKind parse_series_kind(std::string_view name);

inline constexpr Concept kAllConcepts[] = {Concept::age,         Concept::symptoms, Concept::diseases,
                                           Concept::progression, Concept::drugs,    Concept::dosages};
inline constexpr Analysis kAllAnalyses[] = {Analysis::umap, Analysis::saliency, Analysis::lesioning,
                                            Analysis::patching};

/// Base error. Carries the module that raised it plus optional file and record context,
/// so the CLI can report where a failure happened.
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string message, std::string file = {}, std::string record = {});

  const std::string& module() const noexcept { return module_; }
  const std::string& file() const noexcept { return file_; }
  const std::string& record() const noexcept { return record_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string module_;
  std::string detail_;
  std::string file_;
  std::string record_;
};

/// splitmix64 finalizer; used to fan one seed out into independent substreams.
std::uint64_t mix_seed(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) noexcept;

/// Linear-interpolation percentile (p in [0, 100]) of the given values.
double percentile(std::vector<double> values, double p);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception thrown is rethrown.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace llmmap
