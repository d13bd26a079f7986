#include "rankstack/embedding_set.hpp"

#include <fstream>
#include <stdexcept>

#include "rankstack/binio.hpp"

namespace rankstack {

void EmbeddingSet::save(const std::string& path) const {
  if (data.size() != ids.size() * static_cast<size_t>(d_emb))
    throw std::logic_error("embedding set rows inconsistent with d_emb");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write embedding set " + path);
  out.write("RKE1", 4);
  binio::write_string32(out, model_version);
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(d_emb));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    binio::write_le<int64_t>(out, ids[i]);
    for (int j = 0; j < d_emb; ++j)
      binio::write_le<float>(out, data[i * static_cast<size_t>(d_emb) +
                                       static_cast<size_t>(j)]);
  }
}

EmbeddingSet EmbeddingSet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding set " + path);
  binio::expect_magic(in, "RKE1", path);
  EmbeddingSet set;
  set.model_version = binio::read_string32(in);
  set.d_emb = static_cast<int>(binio::read_le<uint32_t>(in));
  uint32_t count = binio::read_le<uint32_t>(in);
  set.ids.resize(count);
  set.data.resize(static_cast<size_t>(count) * set.d_emb);
  for (uint32_t i = 0; i < count; ++i) {
    set.ids[i] = binio::read_le<int64_t>(in);
    for (int j = 0; j < set.d_emb; ++j)
      set.data[static_cast<size_t>(i) * set.d_emb + static_cast<size_t>(j)] =
          binio::read_le<float>(in);
  }
  return set;
}

}  // namespace rankstack
