#pragma once

#include "cellmatch/atlas.hpp"
#include "cellmatch/bopt.hpp"
#include "cellmatch/mgm.hpp"
#include "cellmatch/pipeline.hpp"
#include "cellmatch/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cellmatch::io {

// Insertion-ordered so that dumps are byte-stable.
using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
// fnv1a of the compact dump, as 16 hex digits.
std::string config_hash(const Json& config);
// {"seed", "config_hash", "version"}; the seed is written as a string so
// that 64-bit values survive every JSON reader.
Json meta(std::uint64_t seed, const Json& config);

Json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const Json& j);
// Row-major.
Json mat_to_json(const Mat3& m);
Mat3 mat_from_json(const Json& j);
// +∞ is written as null.
Json number_or_null(double v);
double number_or_inf(const Json& j);

Json to_json(const Worm& w);
Worm worm_from_json(const Json& j);

Json to_json(const RigidTransform& tf);
Json to_json(const AffineTransform& tf);

// Pairs are written as nucleus ids of the left and right worm.
Json matching_to_json(const Matching& m, const Worm& left, const Worm& right, double objective);
Matching matching_from_json(const Json& j, const Worm& left, const Worm& right);

Json universe_to_json(const Universe& u, const std::vector<Worm>& worms);
Universe universe_from_json(const Json& j, const std::vector<Worm>& worms);

Json to_json(const Atlas& a);
Atlas atlas_from_json(const Json& j);

Json to_json(const CostParams& p);
CostParams cost_params_from_json(const Json& j);

Json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const Json& j);
Json to_json(const GroundTruthModel& m);

Json to_json(const TrialRecord& r);
Json to_json(const LearnConfig& cfg);
Json to_json(const PipelineConfig& cfg);
Json to_json(const AccuracyReport& r);

const char* to_string(CostModel m);
const char* to_string(SyncMode m);
const char* to_string(LossKind k);

// Two-space indented dump with a trailing newline.
std::string dump(const Json& j);
Json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& j);

// Worm files (*.json) of a directory in lexicographic order.
std::vector<Worm> read_worm_dir(const std::filesystem::path& dir);
// One file per worm, named <worm_id>.json, each carrying `meta_block`.
void write_worm_dir(const std::filesystem::path& dir, const std::vector<Worm>& worms, const Json& meta_block);

}  // namespace cellmatch::io
