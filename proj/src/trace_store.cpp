#include "llmmap/trace_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace llmmap::trace {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "trace-store";
constexpr std::size_t kFixedHeader = 4 + 4 + 1 + 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t checked_count(const std::vector<std::uint64_t>& shape, const std::string& origin) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / 4 / d)
      throw TraceError(TraceErrc::shape_mismatch, "tensor shape overflows", origin);
    n *= d;
  }
  return n;
}

// Parses magic/version/dtype/dims; returns the payload offset.
std::size_t parse_header(std::span<const std::byte> bytes, TensorHeader& header, const std::string& origin) {
  if (bytes.size() < 4) throw TraceError(TraceErrc::truncated, "file shorter than the magic bytes", origin);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw TraceError(TraceErrc::bad_magic, "bad magic", origin);
  if (bytes.size() < kFixedHeader) throw TraceError(TraceErrc::truncated, "truncated header", origin);
  const auto version = get_u32(bytes.data() + 4);
  if (version != kFormatVersion)
    throw TraceError(TraceErrc::unsupported_version, "unsupported format version " + std::to_string(version), origin);
  const auto dtype = static_cast<std::uint8_t>(bytes[8]);
  if (dtype != static_cast<std::uint8_t>(DType::f32))
    throw TraceError(TraceErrc::unsupported_dtype, "unsupported dtype code " + std::to_string(dtype), origin);
  const auto ndim = static_cast<std::uint8_t>(bytes[9]);
  const std::size_t dims_end = kFixedHeader + 8 * static_cast<std::size_t>(ndim);
  if (bytes.size() < dims_end) throw TraceError(TraceErrc::truncated, "truncated shape", origin);
  header.dtype = DType::f32;
  header.shape.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) header.shape[i] = get_u64(bytes.data() + kFixedHeader + 8 * i);
  return dims_end;
}

std::vector<std::byte> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!fs::exists(path)) throw TraceError(TraceErrc::missing_file, "file does not exist", path.string());
    throw TraceError(TraceErrc::io, "cannot open file", path.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> buf(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size)))
    throw TraceError(TraceErrc::io, "read failed", path.string());
  return buf;
}

std::string sanitize(std::string_view id) {
  std::string out;
  for (unsigned char c : id) out += (std::isalnum(c) || c == '-' || c == '_' || c == '.') ? static_cast<char>(c) : '_';
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

template <class T>
T field(const nlohmann::json& j, const char* key, const std::string& record) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw TraceError(TraceErrc::invalid_record, std::string("missing or mistyped field '") + key + "'", {}, record);
  }
}

std::string record_id(const nlohmann::json& j, const char* key) {
  if (j.is_object() && j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
  return {};
}

}  // namespace

std::string_view to_string(TraceErrc code) {
  switch (code) {
    case TraceErrc::io: return "io";
    case TraceErrc::bad_magic: return "bad_magic";
    case TraceErrc::unsupported_version: return "unsupported_version";
    case TraceErrc::unsupported_dtype: return "unsupported_dtype";
    case TraceErrc::truncated: return "truncated";
    case TraceErrc::shape_mismatch: return "shape_mismatch";
    case TraceErrc::trailing_bytes: return "trailing_bytes";
    case TraceErrc::missing_file: return "missing_file";
    case TraceErrc::layer_mismatch: return "layer_mismatch";
    case TraceErrc::unknown_capture_kind: return "unknown_capture_kind";
    case TraceErrc::invalid_record: return "invalid_record";
    case TraceErrc::duplicate_record: return "duplicate_record";
  }
  return "?";
}

TraceError::TraceError(TraceErrc code, std::string message, std::string file, std::string record)
    : Error(kModule, std::string(to_string(code)) + ": " + message, std::move(file), std::move(record)),
      code_(code) {}

std::uint64_t TensorBlob::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

bool TensorBlob::bit_equal(const TensorBlob& other) const {
  if (dtype != other.dtype || shape != other.shape || data.size() != other.data.size()) return false;
  return data.empty() || std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
}

std::string encode_tensor(const TensorBlob& blob) {
  if (blob.shape.size() > 255) throw TraceError(TraceErrc::shape_mismatch, "more than 255 dimensions");
  if (checked_count(blob.shape, {}) != blob.data.size())
    throw TraceError(TraceErrc::shape_mismatch, "shape product does not equal data length");
  std::string out;
  out.reserve(kFixedHeader + 8 * blob.shape.size() + 4 * blob.data.size());
  out.append(kMagic, 4);
  put_u32(out, kFormatVersion);
  out.push_back(static_cast<char>(blob.dtype));
  out.push_back(static_cast<char>(blob.shape.size()));
  for (auto d : blob.shape) put_u64(out, d);
  for (float f : blob.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

TensorBlob decode_tensor(std::span<const std::byte> bytes, const std::string& origin) {
  TensorHeader header;
  const std::size_t offset = parse_header(bytes, header, origin);
  const std::uint64_t count = checked_count(header.shape, origin);
  const std::uint64_t remaining = bytes.size() - offset;
  if (remaining < count * 4) throw TraceError(TraceErrc::truncated, "payload shorter than the shape implies", origin);
  if (remaining > count * 4)
    throw TraceError(TraceErrc::trailing_bytes, "payload longer than the shape implies", origin);
  TensorBlob blob;
  blob.dtype = header.dtype;
  blob.shape = std::move(header.shape);
  blob.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    blob.data[i] = std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i));
  return blob;
}

void write_tensor(const TensorBlob& blob, const fs::path& path) {
  const std::string bytes = encode_tensor(blob);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceErrc::io, "cannot open for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TraceError(TraceErrc::io, "write failed", path.string());
}

TensorBlob read_tensor(const fs::path& path) {
  const auto bytes = slurp(path);
  return decode_tensor(bytes, path.string());
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!fs::exists(path)) throw TraceError(TraceErrc::missing_file, "file does not exist", path.string());
    throw TraceError(TraceErrc::io, "cannot open file", path.string());
  }
  std::vector<std::byte> head(kFixedHeader + 8 * 255);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  TensorHeader header;
  const std::size_t offset = parse_header(head, header, path.string());
  const std::uint64_t expected = offset + 4 * checked_count(header.shape, path.string());
  const std::uint64_t actual = fs::file_size(path);
  if (actual < expected) throw TraceError(TraceErrc::truncated, "payload shorter than the shape implies", path.string());
  if (actual > expected) throw TraceError(TraceErrc::trailing_bytes, "payload longer than the shape implies", path.string());
  return header;
}

std::string_view to_string(CaptureKind k) {
  switch (k) {
    case CaptureKind::activations: return "activations";
    case CaptureKind::saliency: return "saliency";
    case CaptureKind::lesion_responses: return "lesion_responses";
    case CaptureKind::patch_logits: return "patch_logits";
  }
  return "?";
}

std::string_view to_string(PatchSite s) { return s == PatchSite::attention ? "attention" : "mlp"; }

CaptureKind parse_capture_kind(std::string_view name) {
  for (auto k : {CaptureKind::activations, CaptureKind::saliency, CaptureKind::lesion_responses,
                 CaptureKind::patch_logits})
    if (to_string(k) == name) return k;
  throw TraceError(TraceErrc::unknown_capture_kind, "unknown capture_kind '" + std::string(name) + "'");
}

PatchSite parse_patch_site(std::string_view name) {
  if (name == "attention") return PatchSite::attention;
  if (name == "mlp") return PatchSite::mlp;
  throw TraceError(TraceErrc::invalid_record, "unknown patch site '" + std::string(name) + "'");
}

PointMatrix ActivationTrace::to_matrix() const {
  const auto rows = static_cast<Eigen::Index>(matrix.shape.at(0));
  const auto cols = static_cast<Eigen::Index>(matrix.shape.at(1));
  PointMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = matrix.data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json e = {{"file", r.file}};
    if (!r.id.empty()) e["prompt_id"] = r.id;
    records.push_back(e);
  }
  return {{"format", "llmmap.trace/1"},
          {"model_name", m.model_name},
          {"n_layers", m.n_layers},
          {"hidden_dim", m.hidden_dim},
          {"corpus_id", m.corpus_id},
          {"capture_kind", to_string(m.capture_kind)},
          {"capture_position", m.capture_position},
          {"notes", m.notes},
          {"records", records}};
}

RunManifest manifest_from_json(const nlohmann::json& j, const std::string& origin) {
  RunManifest m;
  try {
    m.model_name = j.at("model_name").get<std::string>();
    m.n_layers = j.at("n_layers").get<int>();
    m.hidden_dim = j.at("hidden_dim").get<int>();
    m.corpus_id = j.value("corpus_id", "");
    m.capture_position = j.value("capture_position", "last_token");
    m.notes = j.value("notes", "");
    for (const auto& r : j.at("records")) {
      RecordRef ref;
      ref.file = r.at("file").get<std::string>();
      if (r.contains("prompt_id")) ref.id = r.at("prompt_id").get<std::string>();
      m.records.push_back(std::move(ref));
    }
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(TraceErrc::invalid_record, std::string("malformed manifest: ") + e.what(), origin);
  }
  try {
    m.capture_kind = parse_capture_kind(j.at("capture_kind").get<std::string>());
  } catch (const TraceError& e) {
    throw TraceError(TraceErrc::unknown_capture_kind, e.detail(), origin);
  } catch (const nlohmann::json::exception&) {
    throw TraceError(TraceErrc::unknown_capture_kind, "manifest has no capture_kind", origin);
  }
  if (m.n_layers < 1 || m.hidden_dim < 1)
    throw TraceError(TraceErrc::invalid_record, "n_layers and hidden_dim must be at least 1", origin);
  if (m.capture_position != "last_token")
    throw TraceError(TraceErrc::invalid_record, "unsupported capture_position '" + m.capture_position + "'", origin);
  return m;
}

nlohmann::json to_json(const SaliencyProfileRecord& r) {
  return {{"prompt_id", r.prompt_id}, {"per_layer", r.per_layer}};
}

nlohmann::json to_json(const LesionRecord& r) {
  nlohmann::json j = {{"prompt_id", r.prompt_id},
                      {"layer", r.layer},
                      {"original_response", r.original_response},
                      {"lesioned_response", r.lesioned_response}};
  if (r.judge_score) j["judge_score"] = *r.judge_score;
  if (r.judge_raw_reply) j["judge_raw_reply"] = *r.judge_raw_reply;
  if (r.prompt_text) j["prompt_text"] = *r.prompt_text;
  return j;
}

nlohmann::json to_json(const PatchRecord& r) {
  return {{"pair_id", r.pair_id},
          {"layer", r.layer},
          {"site", to_string(r.site)},
          {"logit_clean_r", r.logit_clean_r},
          {"logit_clean_rp", r.logit_clean_rp},
          {"logit_corrupt_r", r.logit_corrupt_r},
          {"logit_corrupt_rp", r.logit_corrupt_rp},
          {"logit_patched_r", r.logit_patched_r},
          {"logit_patched_rp", r.logit_patched_rp}};
}

SaliencyProfileRecord saliency_from_json(const nlohmann::json& j) {
  const auto id = record_id(j, "prompt_id");
  return {field<std::string>(j, "prompt_id", id), field<std::vector<double>>(j, "per_layer", id)};
}

LesionRecord lesion_from_json(const nlohmann::json& j) {
  const auto id = record_id(j, "prompt_id");
  LesionRecord r;
  r.prompt_id = field<std::string>(j, "prompt_id", id);
  r.layer = field<int>(j, "layer", id);
  r.original_response = field<std::string>(j, "original_response", id);
  r.lesioned_response = field<std::string>(j, "lesioned_response", id);
  if (j.contains("judge_score") && !j.at("judge_score").is_null()) r.judge_score = field<int>(j, "judge_score", id);
  if (j.contains("judge_raw_reply")) r.judge_raw_reply = field<std::string>(j, "judge_raw_reply", id);
  if (j.contains("prompt_text")) r.prompt_text = field<std::string>(j, "prompt_text", id);
  return r;
}

PatchRecord patch_from_json(const nlohmann::json& j) {
  const auto id = record_id(j, "pair_id");
  PatchRecord r;
  r.pair_id = field<std::string>(j, "pair_id", id);
  r.layer = field<int>(j, "layer", id);
  r.site = parse_patch_site(field<std::string>(j, "site", id));
  r.logit_clean_r = field<double>(j, "logit_clean_r", id);
  r.logit_clean_rp = field<double>(j, "logit_clean_rp", id);
  r.logit_corrupt_r = field<double>(j, "logit_corrupt_r", id);
  r.logit_corrupt_rp = field<double>(j, "logit_corrupt_rp", id);
  r.logit_patched_r = field<double>(j, "logit_patched_r", id);
  r.logit_patched_rp = field<double>(j, "logit_patched_rp", id);
  return r;
}

std::size_t RunBundle::size() const noexcept {
  switch (manifest_.capture_kind) {
    case CaptureKind::activations: return prompt_ids_.size();
    case CaptureKind::saliency: return saliency_.size();
    case CaptureKind::lesion_responses: return lesions_.size();
    case CaptureKind::patch_logits: return patches_.size();
  }
  return 0;
}

bool RunBundle::has_activation(std::string_view prompt_id) const {
  return activation_files_.find(prompt_id) != activation_files_.end();
}

ActivationTrace RunBundle::activation(std::string_view prompt_id) const {
  auto it = activation_files_.find(prompt_id);
  if (it == activation_files_.end())
    throw TraceError(TraceErrc::invalid_record, "no activation trace for prompt", root_.string(), std::string(prompt_id));
  ActivationTrace trace{std::string(prompt_id), read_tensor(it->second)};
  const std::vector<std::uint64_t> want{static_cast<std::uint64_t>(manifest_.n_layers + 1),
                                        static_cast<std::uint64_t>(manifest_.hidden_dim)};
  if (trace.matrix.shape != want)
    throw TraceError(TraceErrc::shape_mismatch, "activation shape changed after load", it->second.string(),
                     trace.prompt_id);
  return trace;
}

RunBundle load_run(const fs::path& manifest_path) {
  fs::path path = manifest_path;
  if (fs::is_directory(path)) path /= "manifest.json";
  std::ifstream in(path);
  if (!in) throw TraceError(TraceErrc::missing_file, "manifest not found", path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw TraceError(TraceErrc::invalid_record, std::string("manifest is not valid JSON: ") + e.what(), path.string());
  }

  RunBundle bundle;
  bundle.manifest_ = manifest_from_json(doc, path.string());
  bundle.root_ = path.parent_path();
  const auto& m = bundle.manifest_;
  std::set<std::string> seen;

  for (const auto& ref : m.records) {
    const fs::path file = bundle.root_ / ref.file;
    if (!fs::exists(file)) throw TraceError(TraceErrc::missing_file, "referenced file is missing", file.string(), ref.id);

    if (m.capture_kind == CaptureKind::activations) {
      if (ref.id.empty()) throw TraceError(TraceErrc::invalid_record, "activation entry without prompt_id", file.string());
      if (!seen.insert(ref.id).second)
        throw TraceError(TraceErrc::duplicate_record, "duplicate prompt id", file.string(), ref.id);
      const auto header = read_tensor_header(file);
      if (header.shape.size() != 2)
        throw TraceError(TraceErrc::shape_mismatch, "activation trace must be 2-D", file.string(), ref.id);
      if (header.shape[0] != static_cast<std::uint64_t>(m.n_layers + 1))
        throw TraceError(TraceErrc::shape_mismatch,
                         "trace has " + std::to_string(header.shape[0]) + " rows, expected n_layers + 1 = " +
                             std::to_string(m.n_layers + 1),
                         file.string(), ref.id);
      if (header.shape[1] != static_cast<std::uint64_t>(m.hidden_dim))
        throw TraceError(TraceErrc::shape_mismatch, "trace width differs from hidden_dim", file.string(), ref.id);
      bundle.prompt_ids_.push_back(ref.id);
      bundle.activation_files_.emplace(ref.id, file);
      continue;
    }

    std::ifstream lines(file);
    if (!lines) throw TraceError(TraceErrc::io, "cannot open record file", file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        throw TraceError(TraceErrc::invalid_record, "line " + std::to_string(lineno) + " is not valid JSON",
                         file.string());
      }
      try {
        switch (m.capture_kind) {
          case CaptureKind::saliency: {
            auto r = saliency_from_json(j);
            if (r.per_layer.size() != static_cast<std::size_t>(m.n_layers))
              throw TraceError(TraceErrc::layer_mismatch,
                               "saliency profile has " + std::to_string(r.per_layer.size()) + " layers, expected " +
                                   std::to_string(m.n_layers),
                               file.string(), r.prompt_id);
            for (double v : r.per_layer)
              if (!std::isfinite(v) || v < 0.0)
                throw TraceError(TraceErrc::invalid_record, "saliency values must be finite and non-negative",
                                 file.string(), r.prompt_id);
            if (!seen.insert(r.prompt_id).second)
              throw TraceError(TraceErrc::duplicate_record, "duplicate prompt id", file.string(), r.prompt_id);
            bundle.saliency_.push_back(std::move(r));
            break;
          }
          case CaptureKind::lesion_responses: {
            auto r = lesion_from_json(j);
            if (r.layer < 0 || r.layer >= m.n_layers)
              throw TraceError(TraceErrc::layer_mismatch, "lesion layer out of range", file.string(), r.prompt_id);
            if (r.judge_score && (*r.judge_score < 1 || *r.judge_score > 10))
              throw TraceError(TraceErrc::invalid_record, "judge_score outside [1, 10]", file.string(), r.prompt_id);
            if (!seen.insert(r.prompt_id + "#" + std::to_string(r.layer)).second)
              throw TraceError(TraceErrc::duplicate_record, "duplicate (prompt, layer) lesion", file.string(),
                               r.prompt_id);
            bundle.lesions_.push_back(std::move(r));
            break;
          }
          case CaptureKind::patch_logits: {
            auto r = patch_from_json(j);
            if (r.layer < 0 || r.layer >= m.n_layers)
              throw TraceError(TraceErrc::layer_mismatch, "patch layer out of range", file.string(), r.pair_id);
            for (double v : {r.logit_clean_r, r.logit_clean_rp, r.logit_corrupt_r, r.logit_corrupt_rp,
                             r.logit_patched_r, r.logit_patched_rp})
              if (!std::isfinite(v))
                throw TraceError(TraceErrc::invalid_record, "non-finite logit", file.string(), r.pair_id);
            const auto key = r.pair_id + "#" + std::to_string(r.layer) + "#" + std::string(to_string(r.site));
            if (!seen.insert(key).second)
              throw TraceError(TraceErrc::duplicate_record, "duplicate (pair, layer, site)", file.string(), r.pair_id);
            bundle.patches_.push_back(std::move(r));
            break;
          }
          case CaptureKind::activations: break;
        }
      } catch (const TraceError& e) {
        if (!e.file().empty()) throw;
        throw TraceError(e.code(), e.detail(), file.string(), e.record());
      }
    }
  }
  return bundle;
}

BundleWriter::BundleWriter(fs::path dir, RunManifest header) : dir_(std::move(dir)), manifest_(std::move(header)) {
  manifest_.records.clear();
  fs::create_directories(dir_);
}

void BundleWriter::add_activation(const std::string& prompt_id, const TensorBlob& matrix) {
  if (manifest_.capture_kind != CaptureKind::activations)
    throw TraceError(TraceErrc::invalid_record, "bundle is not an activation bundle", dir_.string(), prompt_id);
  const std::vector<std::uint64_t> want{static_cast<std::uint64_t>(manifest_.n_layers + 1),
                                        static_cast<std::uint64_t>(manifest_.hidden_dim)};
  if (matrix.shape != want)
    throw TraceError(TraceErrc::shape_mismatch, "activation shape must be [n_layers + 1, hidden_dim]", dir_.string(),
                     prompt_id);
  std::string name = sanitize(prompt_id);
  if (int n = used_names_[name]++; n > 0) name += "-" + std::to_string(n);
  fs::create_directories(dir_ / "activations");
  const std::string rel = "activations/" + name + ".bin";
  write_tensor(matrix, dir_ / rel);
  manifest_.records.push_back({prompt_id, rel});
}

void BundleWriter::add_activation(const std::string& prompt_id, const PointMatrix& matrix) {
  TensorBlob blob;
  blob.shape = {static_cast<std::uint64_t>(matrix.rows()), static_cast<std::uint64_t>(matrix.cols())};
  blob.data.reserve(static_cast<std::size_t>(matrix.size()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) blob.data.push_back(static_cast<float>(matrix(r, c)));
  add_activation(prompt_id, blob);
}

void BundleWriter::add(SaliencyProfileRecord record) { lines_.push_back(to_json(record)); }
void BundleWriter::add(LesionRecord record) { lines_.push_back(to_json(record)); }
void BundleWriter::add(PatchRecord record) { lines_.push_back(to_json(record)); }

fs::path BundleWriter::finish() {
  if (manifest_.capture_kind != CaptureKind::activations) {
    fs::create_directories(dir_ / "records");
    const std::string rel = "records/" + std::string(to_string(manifest_.capture_kind)) + ".jsonl";
    std::ofstream out(dir_ / rel, std::ios::binary | std::ios::trunc);
    if (!out) throw TraceError(TraceErrc::io, "cannot write record file", (dir_ / rel).string());
    for (const auto& j : lines_) out << j.dump() << '\n';
    manifest_.records = {{"", rel}};
  }
  const fs::path manifest_path = dir_ / "manifest.json";
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceErrc::io, "cannot write manifest", manifest_path.string());
  out << to_json(manifest_).dump(2) << '\n';
  return manifest_path;
}

}  // namespace llmmap::trace
