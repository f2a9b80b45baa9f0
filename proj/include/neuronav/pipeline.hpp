#pragma once

// The automated sequence: volume -> skull and ventricle masks -> meshes ->
// OBJ files -> scene document -> manifest with content hashes.
//
// Config is a key: value text document. Relative paths resolve against the
// directory containing the config file.
//
//   input                 raw volume file, DICOM directory, or .zip of DICOM slices (required)
//   output_dir            created if missing (required)
//   bone_hu_min           300
//   csf_hu_min            0
//   csf_hu_max            15
//   min_component_voxels  100
//   closing_radius_vox    1
//   connectivity          26
//   closing_connectivity  6
//   iso                   0.5
//   weld_eps_mm           0
//   offset_mm             150 0 0
//   marker                marker spec file (default: id 0, 6x6, 50 mm)
//   camera                camera file (default: 640x480, f 800)
//   marker_image          PNG; when present the detected pose goes into the scene

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuronav/archive.hpp"
#include "neuronav/detect.hpp"
#include "neuronav/dicom.hpp"
#include "neuronav/hash.hpp"
#include "neuronav/image.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/mesh.hpp"
#include "neuronav/scene.hpp"
#include "neuronav/segmentation.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

struct ModelSettings {
  SegmentationConfig segmentation;
  double iso = 0.5;
  double weld_eps_mm = 0.0;
};

struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path output_dir;
  ModelSettings models;
  Vec3 offset_mm = kOffsetRight150;
  MarkerSpec marker = make_marker_spec(0);
  CameraIntrinsics camera;
  std::optional<std::filesystem::path> marker_image;
};

inline PipelineConfig parse_pipeline_config(std::string_view text, const std::filesystem::path& base_dir) {
  const auto doc = TextDoc::parse(text, ErrorCode::InvalidConfig);
  static const std::vector<std::string> known{"input", "output_dir", "bone_hu_min", "csf_hu_min", "csf_hu_max",
                                              "min_component_voxels", "closing_radius_vox", "connectivity",
                                              "closing_connectivity", "iso", "weld_eps_mm", "offset_mm", "marker",
                                              "camera", "marker_image"};
  for (const auto& k : doc.keys()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw Error(ErrorCode::InvalidConfig, "unknown key '" + k + "'");
  }
  auto resolve = [&](const std::string& key) {
    const std::filesystem::path p(doc.str(key));
    return p.is_absolute() ? p : base_dir / p;
  };
  PipelineConfig cfg;
  cfg.input = resolve("input");
  cfg.output_dir = resolve("output_dir");
  auto& seg = cfg.models.segmentation;
  seg.bone_hu_min = doc.number_or("bone_hu_min", seg.bone_hu_min);
  seg.csf_hu_min = doc.number_or("csf_hu_min", seg.csf_hu_min);
  seg.csf_hu_max = doc.number_or("csf_hu_max", seg.csf_hu_max);
  if (doc.has("min_component_voxels")) seg.min_component_voxels = doc.integer<std::size_t>("min_component_voxels");
  if (doc.has("closing_radius_vox")) seg.closing_radius_vox = doc.integer<std::size_t>("closing_radius_vox");
  if (doc.has("connectivity")) seg.connectivity = doc.integer<int>("connectivity");
  if (doc.has("closing_connectivity")) seg.closing_connectivity = doc.integer<int>("closing_connectivity");
  seg.validate();
  cfg.models.iso = doc.number_or("iso", 0.5);
  if (!(cfg.models.iso > 0 && cfg.models.iso < 1)) throw Error(ErrorCode::InvalidConfig, "iso must lie in (0, 1)");
  cfg.models.weld_eps_mm = doc.number_or("weld_eps_mm", 0.0);
  if (!(cfg.models.weld_eps_mm >= 0)) throw Error(ErrorCode::InvalidConfig, "weld_eps_mm must be >= 0");
  if (doc.has("offset_mm")) {
    const auto o = doc.numbers("offset_mm", 3);
    cfg.offset_mm = Vec3(o[0], o[1], o[2]);
    if (!cfg.offset_mm.allFinite()) throw Error(ErrorCode::InvalidConfig, "offset_mm must be finite");
  }
  try {
    if (doc.has("marker")) cfg.marker = load_marker_spec(resolve("marker"));
    if (doc.has("camera")) cfg.camera = load_camera(resolve("camera"));
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  if (doc.has("marker_image")) cfg.marker_image = resolve("marker_image");
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return parse_pipeline_config(text, std::filesystem::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Input

inline VoxelVolume volume_from_dicom_zip(std::span<const std::uint8_t> bytes) {
  std::vector<SliceRecord> slices;
  for (const auto& e : read_zip(bytes)) {
    if (e.name.empty() || e.name.back() == '/') continue;
    slices.push_back(parse_dicom_slice(e.data));
  }
  return assemble_volume(std::move(slices));
}

inline VoxelVolume load_input_volume(const std::filesystem::path& input) {
  if (std::filesystem::is_directory(input)) return load_dicom_directory(input);
  if (input.extension() == ".zip") return volume_from_dicom_zip(read_file_bytes(input));
  return load_raw_volume(input);
}

// ---------------------------------------------------------------------------
// Models

struct Models {
  TriangleMesh skull;
  TriangleMesh ventricles;
};

/// Segmentation and surface extraction; errors carry the stage.
inline Models build_models(const VoxelVolume& volume, const ModelSettings& s) {
  LabelMask skull, ventricles;
  try {
    skull = segment_skull(volume, s.segmentation);
    ventricles = segment_ventricles(volume, skull, s.segmentation);
  } catch (const Error& e) {
    throw StageError(Stage::Segmentation, e);
  }
  try {
    Models m;
    m.skull = weld_and_normals(marching_cubes(skull, volume.geometry, s.iso), s.weld_eps_mm);
    m.ventricles = weld_and_normals(marching_cubes(ventricles, volume.geometry, s.iso), s.weld_eps_mm);
    return m;
  } catch (const Error& e) {
    throw StageError(Stage::Mesh, e);
  }
}

// ---------------------------------------------------------------------------
// Run

struct Artifact {
  std::string name;
  std::string path;  // relative to the manifest
  std::size_t bytes = 0;
  std::string sha256;
};

struct PipelineResult {
  std::filesystem::path manifest_path;
  std::string manifest_sha256;
  std::vector<Artifact> artifacts;
  SceneState scene;
  std::vector<std::pair<std::string, double>> stage_seconds;
};

inline constexpr std::string_view kManifestFile = "manifest.json";

inline std::string manifest_text(const VoxelVolume& volume, const std::string& volume_sha, const Models& m,
                                 const std::vector<Artifact>& artifacts) {
  using ojson = nlohmann::ordered_json;
  ojson arts = ojson::array();
  for (const auto& a : artifacts) {
    ojson entry{{"name", a.name}, {"path", a.path}, {"bytes", a.bytes}, {"sha256", a.sha256}};
    if (a.name == "skull" || a.name == "ventricles") {
      const auto& mesh = a.name == "skull" ? m.skull : m.ventricles;
      entry["vertices"] = mesh.vertices.size();
      entry["triangles"] = mesh.triangles.size();
    }
    arts.push_back(entry);
  }
  const auto& g = volume.geometry;
  ojson doc{{"format", "neuronav-manifest"},
            {"version", 1},
            {"input",
             {{"dims", {volume.dims[0], volume.dims[1], volume.dims[2]}},
              {"spacing_mm", {g.spacing.x(), g.spacing.y(), g.spacing.z()}},
              {"volume_sha256", volume_sha}}},
            {"artifacts", arts}};
  return doc.dump(2) + "\n";
}

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult result;
  auto clock = std::chrono::steady_clock::now();
  auto lap = [&](const char* stage) {
    const auto now = std::chrono::steady_clock::now();
    result.stage_seconds.emplace_back(stage, std::chrono::duration<double>(now - clock).count());
    clock = now;
  };

  VoxelVolume volume;
  try {
    volume = load_input_volume(cfg.input);
  } catch (const Error& e) {
    throw StageError(Stage::Ingest, e);
  }
  const auto volume_sha = sha256_hex(encode_raw_volume_file(volume));
  lap("ingest");

  const Models models = build_models(volume, cfg.models);
  lap("models");

  std::optional<RigidPose> marker_pose;
  if (cfg.marker_image) {
    try {
      marker_pose = detect_marker(read_png_gray(*cfg.marker_image), cfg.marker, cfg.camera).pose;
    } catch (const Error& e) {
      throw StageError(Stage::Registration, e);
    }
    lap("registration");
  }

  result.scene = default_scene(cfg.offset_mm);
  result.scene.marker_pose = marker_pose;

  try {
    std::filesystem::create_directories(cfg.output_dir);
    auto emit = [&](const std::string& name, const std::string& file, const std::string& bytes) {
      write_file_text(cfg.output_dir / file, bytes);
      result.artifacts.push_back({name, file, bytes.size(), sha256_hex(bytes)});
    };
    emit("skull", "skull.obj", export_obj(models.skull));
    emit("ventricles", "ventricles.obj", export_obj(models.ventricles));
    emit("scene", "scene.json", serialize_scene(result.scene));
    const auto manifest = manifest_text(volume, volume_sha, models, result.artifacts);
    result.manifest_path = cfg.output_dir / kManifestFile;
    write_file_text(result.manifest_path, manifest);
    result.manifest_sha256 = sha256_hex(manifest);
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(Stage::Export, Error(ErrorCode::IoError, e.what()));
  } catch (const Error& e) {
    throw StageError(Stage::Export, e);
  }
  lap("export");
  return result;
}

// ---------------------------------------------------------------------------
// Manifest loading (serve)

struct LoadedOutputs {
  SceneState scene;
  std::map<std::string, std::string> obj_text;  // node name -> OBJ bytes
};

/// Reads a manifest and the artifacts it lists, checking sizes and hashes.
inline LoadedOutputs load_manifest_outputs(const std::filesystem::path& manifest_path) {
  const auto base = std::filesystem::absolute(manifest_path).parent_path();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file_text(manifest_path));
    if (doc.at("format") != "neuronav-manifest") throw Error(ErrorCode::ParseError, "not a neuronav manifest");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  LoadedOutputs out;
  std::map<std::string, std::string> files;
  try {
    for (const auto& a : doc.at("artifacts")) {
      const auto path = a.at("path").get<std::string>();
      const auto text = read_file_text(base / path);
      if (text.size() != a.at("bytes").get<std::size_t>() || sha256_hex(text) != a.at("sha256").get<std::string>()) {
        throw Error(ErrorCode::ParseError, "artifact '" + path + "' does not match its manifest hash");
      }
      files[path] = text;
      if (a.at("name") == "scene") out.scene = parse_scene(text);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  if (out.scene.nodes.empty()) throw Error(ErrorCode::ParseError, "manifest lists no scene with nodes");
  for (const auto& n : out.scene.nodes) {
    auto it = files.find(n.mesh_ref);
    if (it == files.end()) throw Error(ErrorCode::MissingMesh, "manifest has no artifact '" + n.mesh_ref + "'");
    out.obj_text[n.name] = it->second;
  }
  return out;
}

}  // namespace neuronav
