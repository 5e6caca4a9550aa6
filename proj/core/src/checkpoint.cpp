#include <trolldet/checkpoint.hpp>

#include "binary_io.hpp"

#include <nlohmann/json.hpp>

#include <map>

namespace trolldet {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "TGCK";

json describe(const Checkpoint& c) {
  const ModelAssembly& m = c.model;
  const EncoderConfig& e = m.spec.encoder_config;
  json d;
  d["embedding"] = to_string(m.spec.pathway);
  d["encoder"] = to_string(m.spec.encoder);
  d["max_len"] = m.spec.max_len;
  d["finetune_embeddings"] = m.spec.finetune_embeddings;
  d["cnn_windows"] = e.cnn_windows;
  d["cnn_channels"] = e.cnn_channels;
  d["cnn_pooling"] = to_string(e.cnn_pooling);
  d["gru_hidden"] = e.gru_hidden;
  d["tf_d_model"] = e.tf_d_model;
  d["tf_heads"] = e.tf_heads;
  d["tf_ff"] = e.tf_ff;
  d["tf_layers"] = e.tf_layers;
  switch (m.spec.pathway) {
    case PathwayKind::kStaticTable:
      d["table_rows"] = m.table.value.rows();
      d["table_cols"] = m.table.value.cols();
      break;
    case PathwayKind::kBiLmMixer:
      d["bilm_vocab"] = m.bilm->vocab_size;
      d["bilm_embed"] = m.bilm->embed_dim;
      d["bilm_hidden"] = m.bilm->hidden_dim;
      break;
    case PathwayKind::kPrecomputedMixer:
      d["context_layers"] = m.context_layers;
      d["context_dim"] = m.context_dim;
      break;
  }
  d["vocabulary"] = c.vocabulary;
  d["seed"] = c.seed;
  d["epoch"] = c.epoch;
  return d;
}

template <typename T>
T field(const json& d, const char* key) {
  if (!d.contains(key)) throw FormatError(std::string("checkpoint description lacks '") + key + "'");
  try {
    return d.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("checkpoint description field '") + key + "' has the wrong type");
  }
}

ModelAssembly skeleton(const json& d) {
  AssemblySpec spec;
  spec.pathway = parse_pathway(field<std::string>(d, "embedding"));
  spec.encoder = parse_encoder(field<std::string>(d, "encoder"));
  spec.max_len = field<std::size_t>(d, "max_len");
  spec.finetune_embeddings = field<bool>(d, "finetune_embeddings");
  EncoderConfig& e = spec.encoder_config;
  e.cnn_windows = field<std::vector<std::size_t>>(d, "cnn_windows");
  e.cnn_channels = field<std::size_t>(d, "cnn_channels");
  e.cnn_pooling = parse_pooling(field<std::string>(d, "cnn_pooling"));
  e.gru_hidden = field<std::size_t>(d, "gru_hidden");
  e.tf_d_model = field<std::size_t>(d, "tf_d_model");
  e.tf_heads = field<std::size_t>(d, "tf_heads");
  e.tf_ff = field<std::size_t>(d, "tf_ff");
  e.tf_layers = field<std::size_t>(d, "tf_layers");
  switch (spec.pathway) {
    case PathwayKind::kStaticTable: {
      EmbeddingTable table;
      table.matrix = Mat::Zero(field<Eigen::Index>(d, "table_rows"), field<Eigen::Index>(d, "table_cols"));
      return make_static_assembly(spec, table, 0);
    }
    case PathwayKind::kBiLmMixer: {
      Rng rng(0);
      BiLmParams bilm = BiLmParams::make(field<std::size_t>(d, "bilm_vocab"), field<std::size_t>(d, "bilm_embed"),
                                         field<std::size_t>(d, "bilm_hidden"), rng);
      return make_bilm_assembly(spec, std::move(bilm), 0);
    }
    case PathwayKind::kPrecomputedMixer:
      return make_precomputed_assembly(spec, field<std::size_t>(d, "context_layers"),
                                       field<std::size_t>(d, "context_dim"), 0);
  }
  throw FormatError("checkpoint names an unknown pathway");
}

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  checkpoint.model.validate();
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kCheckpointVersion);
  const std::string description = describe(checkpoint).dump();
  w.u32(static_cast<std::uint32_t>(description.size()));
  w.bytes(description);
  const auto groups = checkpoint.model.parameters();
  w.u32(static_cast<std::uint32_t>(groups.size()));
  for (const Parameter* p : groups) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) w.f32(static_cast<float>(p->value(r, c)));
    }
  }
  return w.data();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("not a checkpoint: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t desc_len = r.u32();
  json d;
  try {
    d = json::parse(r.bytes(desc_len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint description is not valid JSON: ") + e.what());
  }

  Checkpoint out;
  out.model = skeleton(d);
  out.vocabulary = field<std::vector<std::string>>(d, "vocabulary");
  out.seed = field<std::uint64_t>(d, "seed");
  out.epoch = field<std::uint64_t>(d, "epoch");

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : out.model.parameters()) by_name[p->name] = p;

  const std::uint32_t n_groups = r.u32();
  if (n_groups != by_name.size()) {
    throw ShapeError("checkpoint has " + std::to_string(n_groups) + " parameter groups, the described assembly has " +
                     std::to_string(by_name.size()));
  }
  for (std::uint32_t g = 0; g < n_groups; ++g) {
    const std::string name(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 2) throw FormatError("group '" + name + "' has unsupported rank " + std::to_string(rank));
    std::vector<std::uint32_t> dims(rank);
    for (auto& dim : dims) dim = r.u32();
    const Eigen::Index rows = rank == 2 ? dims[0] : 1;
    const Eigen::Index cols = rank == 2 ? dims[1] : dims[0];
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("checkpoint group '" + name + "' does not belong to the assembly");
    Parameter& p = *it->second;
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw ShapeError("checkpoint group '" + name + "' is " + shape_string(rows, cols) + ", assembly expects " +
                       shape_string(p.value.rows(), p.value.cols()));
    }
    r.need(static_cast<std::size_t>(rows * cols) * 4);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) p.value(i, j) = static_cast<double>(r.f32());
    }
    by_name.erase(it);
  }
  if (!r.at_end()) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  out.model.validate();
  return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file(path.string(), encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path.string()));
}

}  // namespace trolldet
