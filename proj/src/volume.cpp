#include "cacs/volume.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace cacs {

namespace {

constexpr const char* kMagic = "CACVOL1";

std::string format_spacing(const Spacing& s) {
  return format_double(s.slice_mm) + " " + format_double(s.row_mm) + " " + format_double(s.col_mm);
}

struct Header {
  Eigen::Index n_slices = 0, n_rows = 0, n_cols = 0;
  Spacing spacing;
  std::string dtype;
};

std::string read_line(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ValidationError(path + ": truncated header");
  }
  return line;
}

Header read_header(std::istream& in, const std::string& path) {
  if (read_line(in, path) != kMagic) {
    throw ValidationError(path + ": bad magic, expected " + std::string(kMagic));
  }
  Header h;
  {
    std::istringstream ls(read_line(in, path));
    std::string tag;
    if (!(ls >> tag >> h.n_slices >> h.n_rows >> h.n_cols) || tag != "dims") {
      throw ValidationError(path + ": malformed dims line");
    }
    if (h.n_slices <= 0 || h.n_rows <= 0 || h.n_cols <= 0) {
      throw ValidationError(path + ": dims must be positive");
    }
  }
  {
    std::istringstream ls(read_line(in, path));
    std::string tag;
    if (!(ls >> tag >> h.spacing.slice_mm >> h.spacing.row_mm >> h.spacing.col_mm) ||
        tag != "spacing") {
      throw ValidationError(path + ": malformed spacing line");
    }
    if (!h.spacing.valid()) throw ValidationError(path + ": spacing must be positive");
  }
  {
    std::istringstream ls(read_line(in, path));
    std::string tag;
    if (!(ls >> tag >> h.dtype) || tag != "dtype") {
      throw ValidationError(path + ": malformed dtype line");
    }
  }
  if (read_line(in, path) != "data") {
    throw ValidationError(path + ": expected data line");
  }
  return h;
}

void read_payload(std::istream& in, char* dst, std::streamsize bytes, const std::string& path) {
  in.read(dst, bytes);
  if (in.gcount() != bytes) {
    throw ValidationError(path + ": payload shorter than header dims require");
  }
  char extra;
  if (in.read(&extra, 1), in.gcount() != 0) {
    throw ValidationError(path + ": payload longer than header dims require");
  }
}

std::ifstream open_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

template <typename Scalar>
void write_grid(const VolumeGrid<Scalar>& grid, const std::filesystem::path& path,
                const char* dtype) {
  if (grid.empty()) throw ValidationError("refusing to write empty volume " + path.string());
  auto out = open_write(path);
  out << kMagic << "\n";
  out << "dims " << grid.n_slices() << " " << grid.n_rows() << " " << grid.n_cols() << "\n";
  out << "spacing " << format_spacing(grid.spacing()) << "\n";
  out << "dtype " << dtype << "\n";
  out << "data\n";
  out.write(reinterpret_cast<const char*>(grid.voxels().data()),
            static_cast<std::streamsize>(grid.size() * sizeof(Scalar)));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string format_double(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of negative zero
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

CtVolume read_volume(const std::filesystem::path& path) {
  auto in = open_read(path);
  const Header h = read_header(in, path.string());
  if (h.dtype != "int16") {
    throw ValidationError(path.string() + ": expected dtype int16, got " + h.dtype);
  }
  CtVolume vol(h.n_slices, h.n_rows, h.n_cols, h.spacing);
  read_payload(in, reinterpret_cast<char*>(vol.voxels().data()),
               static_cast<std::streamsize>(vol.size() * sizeof(std::int16_t)), path.string());
  for (Eigen::Index i = 0; i < vol.size(); ++i) {
    vol.voxels()[i] = std::clamp(vol.voxels()[i], kHuMin, kHuMax);
  }
  return vol;
}

void write_volume(const CtVolume& vol, const std::filesystem::path& path) {
  write_grid(vol, path, "int16");
}

MaskVolume read_mask(const std::filesystem::path& path, MaskRole role) {
  auto in = open_read(path);
  const Header h = read_header(in, path.string());
  if (h.dtype != "uint8") {
    throw ValidationError(path.string() + ": expected dtype uint8, got " + h.dtype);
  }
  MaskVolume mask(h.n_slices, h.n_rows, h.n_cols, h.spacing, role);
  read_payload(in, reinterpret_cast<char*>(mask.voxels().data()),
               static_cast<std::streamsize>(mask.size()), path.string());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.voxels()[i] > 1) {
      throw ValidationError(path.string() + ": mask values must be 0 or 1");
    }
  }
  return mask;
}

void write_mask(const MaskVolume& mask, const std::filesystem::path& path) {
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.voxels()[i] > 1) throw ValidationError("mask values must be 0 or 1");
  }
  write_grid(mask, path, "uint8");
}

ProbVolume read_prob(const std::filesystem::path& path) {
  auto in = open_read(path);
  const Header h = read_header(in, path.string());
  if (h.dtype != "float32") {
    throw ValidationError(path.string() + ": expected dtype float32, got " + h.dtype);
  }
  ProbVolume probs(h.n_slices, h.n_rows, h.n_cols, h.spacing);
  read_payload(in, reinterpret_cast<char*>(probs.voxels().data()),
               static_cast<std::streamsize>(probs.size() * sizeof(float)), path.string());
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const float v = probs.voxels()[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError(path.string() + ": probabilities must lie in [0,1]");
    }
  }
  return probs;
}

void write_prob(const ProbVolume& probs, const std::filesystem::path& path) {
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const float v = probs.voxels()[i];
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("probabilities must lie in [0,1]");
  }
  write_grid(probs, path, "float32");
}

ProbVolume read_prob_or_mask(const std::filesystem::path& path) {
  std::string dtype;
  {
    auto in = open_read(path);
    dtype = read_header(in, path.string()).dtype;
  }
  if (dtype == "float32") return read_prob(path);
  if (dtype == "uint8") {
    const MaskVolume mask = read_mask(path, MaskRole::prediction);
    ProbVolume probs(mask.n_slices(), mask.n_rows(), mask.n_cols(), mask.spacing());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      probs.voxels()[i] = static_cast<float>(mask.voxels()[i]);
    }
    return probs;
  }
  throw ValidationError(path.string() + ": expected dtype float32 or uint8, got " + dtype);
}

}  // namespace cacs
