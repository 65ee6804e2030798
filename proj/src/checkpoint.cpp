#include "fruitcomm/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fruitcomm {

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = value;
      return;
    }
  meta.emplace_back(key, value);
}

std::optional<std::string> Checkpoint::get_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return std::nullopt;
}

std::string Checkpoint::require_meta(const std::string& key) const {
  auto v = get_meta(key);
  if (!v) throw std::runtime_error("checkpoint is missing metadata '" + key + "'");
  return *v;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& Checkpoint::require(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (t == nullptr) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
  return *t;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

void write_checkpoint(std::ostream& out, const Checkpoint& cp) {
  out << "fruitcomm-checkpoint " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : cp.meta) {
    if (k.find_first_of("\t\n") != std::string::npos || v.find_first_of("\t\n") != std::string::npos)
      throw std::invalid_argument("checkpoint metadata may not contain tabs or newlines");
    out << "meta\t" << k << '\t' << v << '\n';
  }
  for (const NamedTensor& t : cp.tensors) {
    if (t.values.size() != t.shape.size()) throw std::invalid_argument("tensor '" + t.name + "' size mismatch");
    out << "tensor\t" << t.name << '\t' << t.shape.rows << '\t' << t.shape.cols << '\t';
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (i > 0) out << ' ';
      out << format_double(t.values[i]);
    }
    out << '\n';
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty checkpoint");
  std::istringstream head(line);
  std::string magic;
  int version = 0;
  head >> magic >> version;
  if (magic != "fruitcomm-checkpoint") throw std::runtime_error("not a fruitcomm checkpoint");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  Checkpoint cp;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = [&](std::size_t from) {
      auto p = line.find('\t', from);
      if (p == std::string::npos) throw std::runtime_error("checkpoint line " + std::to_string(line_no) + " malformed");
      return p;
    };
    std::size_t t1 = tab(0);
    std::string kind = line.substr(0, t1);
    if (kind == "meta") {
      std::size_t t2 = tab(t1 + 1);
      cp.meta.emplace_back(line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1));
    } else if (kind == "tensor") {
      std::size_t t2 = tab(t1 + 1), t3 = tab(t2 + 1), t4 = tab(t3 + 1);
      NamedTensor t;
      t.name = line.substr(t1 + 1, t2 - t1 - 1);
      t.shape.rows = std::stoul(line.substr(t2 + 1, t3 - t2 - 1));
      t.shape.cols = std::stoul(line.substr(t3 + 1, t4 - t3 - 1));
      t.values.reserve(t.shape.size());
      const char* p = line.data() + t4 + 1;
      const char* end = line.data() + line.size();
      while (p < end) {
        double v = 0.0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{})
          throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": bad number");
        t.values.push_back(v);
        p = next;
        while (p < end && *p == ' ') ++p;
      }
      if (t.values.size() != t.shape.size())
        throw std::runtime_error("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                 " values, expected " + std::to_string(t.shape.size()));
      cp.tensors.push_back(std::move(t));
    } else {
      throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
    }
  }
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    write_checkpoint(out, cp);
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace fruitcomm
