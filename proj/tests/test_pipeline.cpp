#include <gtest/gtest.h>
#include <zlib.h>

#include "neuronav/phantom.hpp"
#include "neuronav/pipeline.hpp"
#include "support/temp_dir.hpp"

namespace neuronav {
namespace {

using testing::TempDir;

// --- hashing ---------------------------------------------------------------------

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex(std::string_view("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  EXPECT_EQ(sha256_hex(std::string(1000000, 'a')), "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

// --- zip -------------------------------------------------------------------------

/// Single-entry deflated archive built by hand as an independent reader oracle.
std::vector<std::uint8_t> deflated_zip(const std::string& name, const std::string& content) {
  std::vector<std::uint8_t> packed(compressBound(uLong(content.size())) + 64);
  z_stream zs{};
  deflateInit2(&zs, 9, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(content.data()));
  zs.avail_in = uInt(content.size());
  zs.next_out = packed.data();
  zs.avail_out = uInt(packed.size());
  EXPECT_EQ(deflate(&zs, Z_FINISH), Z_STREAM_END);
  packed.resize(zs.total_out);
  deflateEnd(&zs);
  const auto crc = std::uint32_t(crc32(0, reinterpret_cast<const Bytef*>(content.data()), uInt(content.size())));

  std::vector<std::uint8_t> out;
  auto u16 = [&](std::vector<std::uint8_t>& v, unsigned x) { v.push_back(std::uint8_t(x)), v.push_back(std::uint8_t(x >> 8)); };
  auto u32 = [&](std::vector<std::uint8_t>& v, unsigned x) { u16(v, x & 0xffff), u16(v, x >> 16); };
  u32(out, 0x04034b50), u16(out, 20), u16(out, 0), u16(out, 8), u16(out, 0), u16(out, 0);
  u32(out, crc), u32(out, unsigned(packed.size())), u32(out, unsigned(content.size()));
  u16(out, unsigned(name.size())), u16(out, 0);
  out.insert(out.end(), name.begin(), name.end());
  out.insert(out.end(), packed.begin(), packed.end());
  std::vector<std::uint8_t> cd;
  u32(cd, 0x02014b50), u16(cd, 20), u16(cd, 20), u16(cd, 0), u16(cd, 8), u16(cd, 0), u16(cd, 0);
  u32(cd, crc), u32(cd, unsigned(packed.size())), u32(cd, unsigned(content.size()));
  u16(cd, unsigned(name.size())), u16(cd, 0), u16(cd, 0), u16(cd, 0), u16(cd, 0), u32(cd, 0), u32(cd, 0);
  cd.insert(cd.end(), name.begin(), name.end());
  const auto cd_at = unsigned(out.size());
  out.insert(out.end(), cd.begin(), cd.end());
  u32(out, 0x06054b50), u16(out, 0), u16(out, 0), u16(out, 1), u16(out, 1), u32(out, unsigned(cd.size())), u32(out, cd_at), u16(out, 0);
  return out;
}

TEST(Zip, StoredRoundTrip) {
  std::vector<ZipEntry> entries{{"a.dcm", {1, 2, 3}}, {"dir/", {}}, {"b.dcm", std::vector<std::uint8_t>(70000, 7)}};
  const auto back = read_zip(write_zip(entries));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].name, entries[i].name);
    EXPECT_EQ(back[i].data, entries[i].data);
  }
  EXPECT_TRUE(read_zip(write_zip({})).empty());
}

TEST(Zip, ReadsDeflatedEntries) {
  std::string content;
  for (int i = 0; i < 5000; ++i) content += "slice " + std::to_string(i % 17) + "\n";
  const auto zip = deflated_zip("x/slice.dcm", content);
  EXPECT_LT(zip.size(), content.size() / 4);
  const auto back = read_zip(zip);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].name, "x/slice.dcm");
  EXPECT_EQ(std::string(back[0].data.begin(), back[0].data.end()), content);
}

TEST(Zip, RejectsCorruption) {
  auto zip = write_zip({{"a", {1, 2, 3, 4}}});
  auto bad = zip;
  bad[30 + 1 + 2] ^= 0xff;  // payload byte after the one-char name
  EXPECT_THROW(read_zip(bad), Error);
  EXPECT_THROW(read_zip(std::vector<std::uint8_t>(zip.begin(), zip.begin() + 20)), Error);
  EXPECT_THROW(read_zip(std::vector<std::uint8_t>(100, 0)), Error);
}

// --- config --------------------------------------------------------------------

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

TEST(PipelineConfig, DefaultsAndRelativePaths) {
  const auto cfg = parse_pipeline_config("input: vol.nrv\noutput_dir: out\n", "/data/case1");
  EXPECT_EQ(cfg.input, std::filesystem::path("/data/case1/vol.nrv"));
  EXPECT_EQ(cfg.output_dir, std::filesystem::path("/data/case1/out"));
  EXPECT_EQ(cfg.models.segmentation.bone_hu_min, 300);
  EXPECT_EQ(cfg.models.segmentation.csf_hu_min, 0);
  EXPECT_EQ(cfg.models.segmentation.csf_hu_max, 15);
  EXPECT_EQ(cfg.models.iso, 0.5);
  EXPECT_EQ(cfg.offset_mm, Vec3(150, 0, 0));
  EXPECT_EQ(cfg.camera, CameraIntrinsics{});
  EXPECT_FALSE(cfg.marker_image);
  const auto abs = parse_pipeline_config("input: /v.nrv\noutput_dir: /o\noffset_mm: 100 0 0\niso: 0.25\n", "/x");
  EXPECT_EQ(abs.input, std::filesystem::path("/v.nrv"));
  EXPECT_EQ(abs.offset_mm, Vec3(100, 0, 0));
  EXPECT_EQ(abs.models.iso, 0.25);
}

TEST(PipelineConfig, Errors) {
  for (const char* text : {"output_dir: o\n", "input: v\n", "input: v\noutput_dir: o\nisovalue: 1\n",
                           "input: v\noutput_dir: o\niso: 1.5\n", "input: v\noutput_dir: o\ncsf_hu_max: 400\n",
                           "input: v\noutput_dir: o\noffset_mm: 1 2\n", "input: v\noutput_dir: o\nconnectivity: 8\n",
                           "input v\n", "input: v\noutput_dir: o\ncamera: /nonexistent/cam.txt\n"}) {
    EXPECT_EQ(code_of([&] { parse_pipeline_config(text, "/"); }), ErrorCode::InvalidConfig) << text;
  }
  EXPECT_EQ(code_of([] { load_pipeline_config("/nonexistent/pipeline.cfg"); }), ErrorCode::InvalidConfig);
}

// --- runs ------------------------------------------------------------------------

struct Case {
  TempDir dir;
  std::filesystem::path config;

  explicit Case(const VoxelVolume& vol, const std::string& extra = "") {
    save_raw_volume(dir / "vol.nrv", vol);
    config = dir / "pipeline.cfg";
    write_file_text(config, "input: vol.nrv\noutput_dir: out\n" + extra);
  }
};

const VoxelVolume& phantom_volume() {
  static const VoxelVolume v = make_head_phantom({}).volume;
  return v;
}

TEST(RunPipeline, WritesArtifactsMatchingTheManifest) {
  Case c(phantom_volume());
  const auto r = run_pipeline(load_pipeline_config(c.config));
  const auto out = c.dir / "out";
  ASSERT_EQ(r.artifacts.size(), 3u);
  const auto manifest = nlohmann::json::parse(read_file_text(out / "manifest.json"));
  EXPECT_EQ(manifest["format"], "neuronav-manifest");
  EXPECT_EQ(sha256_hex(read_file_bytes(out / "manifest.json")), r.manifest_sha256);
  EXPECT_EQ(manifest["input"]["volume_sha256"], sha256_hex(read_file_bytes(c.dir / "vol.nrv")));
  for (const auto& a : manifest["artifacts"]) {
    const auto bytes = read_file_bytes(out / a["path"].get<std::string>());
    EXPECT_EQ(a["bytes"].get<std::size_t>(), bytes.size());
    EXPECT_EQ(a["sha256"], sha256_hex(bytes));
  }
  const auto skull = import_obj_file(out / "skull.obj");
  EXPECT_EQ(manifest["artifacts"][0]["triangles"].get<std::size_t>(), skull.triangles.size());
  EXPECT_EQ(mesh_stats(skull).boundary_edge_count, 0u);
  EXPECT_GT(import_obj_file(out / "ventricles.obj").triangles.size(), 100u);
  const auto scene = parse_scene(read_file_text(out / "scene.json"));
  EXPECT_EQ(scene, default_scene());
  EXPECT_FALSE(scene.marker_pose);
  EXPECT_EQ(manifest.dump().find("time"), std::string::npos);
}

TEST(RunPipeline, Deterministic) {
  Case a(phantom_volume()), b(phantom_volume());
  const auto ra = run_pipeline(load_pipeline_config(a.config));
  const auto rb = run_pipeline(load_pipeline_config(b.config));
  EXPECT_EQ(ra.manifest_sha256, rb.manifest_sha256);
  EXPECT_EQ(read_file_bytes(a.dir / "out/skull.obj"), read_file_bytes(b.dir / "out/skull.obj"));
  const auto again = run_pipeline(load_pipeline_config(a.config));
  EXPECT_EQ(again.manifest_sha256, ra.manifest_sha256);
}

TEST(RunPipeline, DicomDirectoryAndZipMatchRawInput) {
  Case raw(phantom_volume());
  const auto expected = run_pipeline(load_pipeline_config(raw.config));

  TempDir d;
  std::filesystem::create_directories(d / "slices");
  std::vector<ZipEntry> entries;
  const auto slices = slice_volume(phantom_volume());
  for (std::size_t k = 0; k < slices.size(); ++k) {
    auto bytes = write_dicom_slice(slices[k], int(k + 1));
    const auto name = "s" + std::to_string(1000 + (k * 37) % slices.size()) + ".dcm";  // shuffled names
    write_file_bytes(d / "slices" / name, bytes);
    entries.push_back({name, std::move(bytes)});
  }
  write_file_bytes(d / "slices.zip", write_zip(entries));
  write_file_text(d / "dir.cfg", "input: slices\noutput_dir: out_dir\n");
  write_file_text(d / "zip.cfg", "input: slices.zip\noutput_dir: out_zip\n");
  const auto from_dir = run_pipeline(load_pipeline_config(d / "dir.cfg"));
  const auto from_zip = run_pipeline(load_pipeline_config(d / "zip.cfg"));
  EXPECT_EQ(from_dir.manifest_sha256, expected.manifest_sha256);
  EXPECT_EQ(from_zip.manifest_sha256, expected.manifest_sha256);
}

TEST(RunPipeline, AllAirFailsInSegmentation) {
  VoxelVolume air = phantom_volume();
  std::fill(air.samples.begin(), air.samples.end(), std::int16_t(-1000));
  Case c(air);
  try {
    run_pipeline(load_pipeline_config(c.config));
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::Segmentation);
    EXPECT_EQ(e.code(), ErrorCode::EmptySegment);
    EXPECT_NE(std::string(e.what()).find("Stage=segmentation"), std::string::npos);
  }
  EXPECT_FALSE(std::filesystem::exists(c.dir / "out/manifest.json"));
}

TEST(RunPipeline, MissingInputFailsInIngest) {
  TempDir d;
  write_file_text(d / "p.cfg", "input: nothing.nrv\noutput_dir: out\n");
  try {
    run_pipeline(load_pipeline_config(d / "p.cfg"));
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::Ingest);
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(RunPipeline, MarkerImageSetsScenePose) {
  const CameraIntrinsics cam;
  const auto spec = make_marker_spec(0);
  const RigidPose truth{Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Vec3(1, 1, 0).normalized())), Vec3(-30, 20, 600)};
  Case c(phantom_volume(), "marker_image: marker.png\n");
  write_png(render_marker_image(spec, truth, cam), c.dir / "marker.png");
  const auto r = run_pipeline(load_pipeline_config(c.config));
  ASSERT_TRUE(r.scene.marker_pose);
  EXPECT_LT((r.scene.marker_pose->translation - truth.translation).norm(), 5.0);
  EXPECT_LT(rotation_distance(r.scene.marker_pose->rotation, truth.rotation), 0.02);
  EXPECT_EQ(parse_scene(read_file_text(c.dir / "out/scene.json")), r.scene);

  write_png(GrayImage(cam.width, cam.height, 255), c.dir / "marker.png");
  try {
    run_pipeline(load_pipeline_config(c.config));
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::Registration);
    EXPECT_EQ(e.code(), ErrorCode::NoMarkerFound);
  }
}

TEST(Manifest, LoadsAndVerifiesOutputs) {
  Case c(phantom_volume());
  run_pipeline(load_pipeline_config(c.config));
  const auto loaded = load_manifest_outputs(c.dir / "out/manifest.json");
  EXPECT_EQ(loaded.scene, default_scene());
  EXPECT_EQ(loaded.obj_text.at("skull"), read_file_text(c.dir / "out/skull.obj"));
  auto text = read_file_text(c.dir / "out/ventricles.obj");
  text[text.size() - 2] = text[text.size() - 2] == '1' ? '2' : '1';
  write_file_text(c.dir / "out/ventricles.obj", text);
  EXPECT_EQ(code_of([&] { load_manifest_outputs(c.dir / "out/manifest.json"); }), ErrorCode::ParseError);
  std::filesystem::remove(c.dir / "out/ventricles.obj");
  EXPECT_EQ(code_of([&] { load_manifest_outputs(c.dir / "out/manifest.json"); }), ErrorCode::IoError);
}

}  // namespace
}  // namespace neuronav
