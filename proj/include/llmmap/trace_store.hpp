#pragma once

// On-disk trace bundles exchanged between the extraction harness (writer) and the
// analyzers (readers). See docs/trace-format.md for the byte-level layout.
//
// Layout of a bundle directory:
//   manifest.json
//   activations/*.bin      dense f32 tensors, one per prompt
//   records/*.jsonl        saliency / lesion / patch records, one JSON object per line

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"

namespace llmmap::trace {

inline constexpr char kMagic[4] = {'L', 'M', 'C', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 0 };

struct TensorBlob {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t element_count() const;
  /// Bit-level equality (distinguishes -0.0 from 0.0, compares NaN payloads).
  bool bit_equal(const TensorBlob& other) const;
};

enum class TraceErrc {
  io,
  bad_magic,
  unsupported_version,
  unsupported_dtype,
  truncated,
  shape_mismatch,
  trailing_bytes,
  missing_file,
  layer_mismatch,
  unknown_capture_kind,
  invalid_record,
  duplicate_record,
};

std::string_view to_string(TraceErrc code);

class TraceError : public Error {
 public:
  TraceError(TraceErrc code, std::string message, std::string file = {}, std::string record = {});
  TraceErrc code() const noexcept { return code_; }

 private:
  TraceErrc code_;
};

std::string encode_tensor(const TensorBlob& blob);
TensorBlob decode_tensor(std::span<const std::byte> bytes, const std::string& origin = {});
void write_tensor(const TensorBlob& blob, const std::filesystem::path& path);
TensorBlob read_tensor(const std::filesystem::path& path);

struct TensorHeader {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
};

/// Validates the header and the file length without reading the payload.
TensorHeader read_tensor_header(const std::filesystem::path& path);

enum class CaptureKind { activations, saliency, lesion_responses, patch_logits };
enum class PatchSite { attention, mlp };

std::string_view to_string(CaptureKind k);
std::string_view to_string(PatchSite s);
CaptureKind parse_capture_kind(std::string_view name);
PatchSite parse_patch_site(std::string_view name);

struct RecordRef {
  std::string id;  // prompt id for activation files; empty for JSON-lines files
  std::string file;
};

struct RunManifest {
  std::string model_name;
  int n_layers = 0;
  int hidden_dim = 0;
  std::string corpus_id;
  CaptureKind capture_kind = CaptureKind::activations;
  std::string capture_position = "last_token";
  std::string notes;
  std::vector<RecordRef> records;
};

/// Residual-stream vectors for one prompt; row 0 is the embedding output, row l the output of block l.
struct ActivationTrace {
  std::string prompt_id;
  TensorBlob matrix;

  PointMatrix to_matrix() const;
};

struct SaliencyProfileRecord {
  std::string prompt_id;
  std::vector<double> per_layer;
};

struct LesionRecord {
  std::string prompt_id;
  int layer = 0;
  std::string original_response;
  std::string lesioned_response;
  std::optional<int> judge_score;
  std::optional<std::string> judge_raw_reply;
  std::optional<std::string> prompt_text;
};

struct PatchRecord {
  std::string pair_id;
  int layer = 0;
  PatchSite site = PatchSite::attention;
  double logit_clean_r = 0, logit_clean_rp = 0;
  double logit_corrupt_r = 0, logit_corrupt_rp = 0;
  double logit_patched_r = 0, logit_patched_rp = 0;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j, const std::string& origin = {});
nlohmann::json to_json(const SaliencyProfileRecord& r);
nlohmann::json to_json(const LesionRecord& r);
nlohmann::json to_json(const PatchRecord& r);
SaliencyProfileRecord saliency_from_json(const nlohmann::json& j);
LesionRecord lesion_from_json(const nlohmann::json& j);
PatchRecord patch_from_json(const nlohmann::json& j);

/// A validated bundle. Activation payloads are read on demand; the bundle is immutable
/// after load, so concurrent readers observe identical data.
class RunBundle {
 public:
  const RunManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  /// Number of records (activation files, or JSON-lines records for the other kinds).
  std::size_t size() const noexcept;

  /// Prompt ids of activation records, in manifest order.
  const std::vector<std::string>& prompt_ids() const noexcept { return prompt_ids_; }
  bool has_activation(std::string_view prompt_id) const;
  ActivationTrace activation(std::string_view prompt_id) const;

  const std::vector<SaliencyProfileRecord>& saliency() const noexcept { return saliency_; }
  const std::vector<LesionRecord>& lesions() const noexcept { return lesions_; }
  const std::vector<PatchRecord>& patches() const noexcept { return patches_; }

 private:
  friend RunBundle load_run(const std::filesystem::path& manifest_path);

  RunManifest manifest_;
  std::filesystem::path root_;
  std::vector<std::string> prompt_ids_;
  std::map<std::string, std::filesystem::path, std::less<>> activation_files_;
  std::vector<SaliencyProfileRecord> saliency_;
  std::vector<LesionRecord> lesions_;
  std::vector<PatchRecord> patches_;
};

/// Loads and cross-validates a bundle. Accepts the manifest path or the bundle directory.
RunBundle load_run(const std::filesystem::path& manifest_path);

/// Single-writer bundle builder. Records are buffered and the manifest is written by finish().
class BundleWriter {
 public:
  BundleWriter(std::filesystem::path dir, RunManifest header);

  void add_activation(const std::string& prompt_id, const TensorBlob& matrix);
  void add_activation(const std::string& prompt_id, const PointMatrix& matrix);
  void add(SaliencyProfileRecord record);
  void add(LesionRecord record);
  void add(PatchRecord record);

  /// Writes sidecar files and manifest.json; returns the manifest path.
  std::filesystem::path finish();

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;
  std::map<std::string, int> used_names_;
  std::vector<nlohmann::json> lines_;
};

}  // namespace llmmap::trace
