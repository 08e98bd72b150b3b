#include "alchemy/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "alchemy/error.hpp"
#include "alchemy/random.hpp"

namespace alchemy {

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'L', 'C', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

/// Consecutive runs of `order` whose summed content length stays within
/// `max_tokens` (each group holds at least one episode).
std::vector<std::vector<const EncodedEpisode*>> group_by_tokens(const std::vector<LabeledEpisode>& episodes,
                                                                std::span<const std::size_t> order,
                                                                int max_tokens) {
  std::vector<std::vector<const EncodedEpisode*>> groups;
  std::vector<const EncodedEpisode*> cur;
  long tokens = 0;
  for (std::size_t idx : order) {
    const EncodedEpisode* e = &episodes[idx].encoded;
    if (!cur.empty() && tokens + e->length > max_tokens) {
      groups.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(e);
    tokens += e->length;
  }
  if (!cur.empty()) groups.push_back(std::move(cur));
  return groups;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated");
  return v;
}

void read_floats(std::istream& in, std::vector<float>& dst, std::size_t n) {
  dst.resize(n);
  in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated");
}

}  // namespace

std::vector<LabeledEpisode> label_episodes(const std::vector<EpisodeRecord>& records,
                                           const std::vector<Chemistry>& chemistries, int max_seq_len) {
  std::vector<LabeledEpisode> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.episode.chemistry_id >= chemistries.size()) {
      throw Error(ErrorCode::kMissingOracleContext,
                  "episode " + r.id + " references unknown chemistry " + std::to_string(r.episode.chemistry_id));
    }
    LabeledEpisode le;
    le.id = r.id;
    le.chemistry = &chemistries[r.episode.chemistry_id];
    le.episode = r.episode;
    le.encoded = encode_episode(r.episode, max_seq_len);
    out.push_back(std::move(le));
  }
  return out;
}

EvalResult evaluate_episodes(const Transformer& model, const std::vector<LabeledEpisode>& episodes,
                             int max_batch_tokens) {
  EvalResult out;
  out.predictions.reserve(episodes.size());
  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double loss = 0.0;
  std::size_t at = 0;
  for (const auto& group : group_by_tokens(episodes, order, max_batch_tokens)) {
    const BatchResult r = model.evaluate(group);
    loss += r.loss_sum;
    out.finite = out.finite && r.finite;
    for (int p : r.predictions) {
      const auto& e = episodes[at++];
      out.predictions.push_back({e.id, p, e.encoded.label});
    }
  }
  out.mean_loss = episodes.empty() ? 0.0 : loss / static_cast<double>(episodes.size());
  return out;
}

std::vector<EventRecord> classify_predictions(const std::vector<LabeledEpisode>& episodes,
                                              const std::vector<Prediction>& predictions) {
  if (episodes.size() != predictions.size()) {
    throw Error(ErrorCode::kShapeMismatch, "prediction count does not match episode count");
  }
  std::vector<EventRecord> out;
  out.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    out.push_back(classify(*episodes[i].chemistry, episodes[i].episode, predictions[i].predicted, episodes[i].id));
  }
  return out;
}

Trainer::Trainer(TrainerOptions options, const std::vector<LabeledEpisode>* train,
                 const std::vector<LabeledEpisode>* val)
    : options_(std::move(options)),
      train_(train),
      val_(val),
      model_(options_.model, derive_seed(options_.seed, {0x3ded})),
      adam_(model_.parameter_count()) {
  options_.optimizer.validate();
  if (options_.max_batch_tokens < 1) throw Error(ErrorCode::kInvalidConfig, "max_batch_tokens must be >= 1");
}

Trainer::EpochStats Trainer::train_epoch(int epoch) {
  EpochStats stats;
  const auto& episodes = *train_;
  const auto n = episodes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(options_.seed, {0x5417, static_cast<std::uint64_t>(epoch)}));
  rng.shuffle(std::span<std::size_t>(order));

  const int total = options_.optimizer.epochs;
  const double lr = lr_schedule(options_.optimizer, std::min(epoch - 1, total), total);
  const auto batch_size = static_cast<std::size_t>(options_.optimizer.batch_size);
  std::vector<float> grad(model_.parameter_count());
  std::vector<int> predicted(n, 0);
  double loss = 0.0;
  std::size_t seen = 0;

  for (std::size_t start = 0; start < n; start += batch_size) {
    if (options_.max_steps && total_steps_ >= *options_.max_steps) {
      stats.stopped = true;
      break;
    }
    const std::size_t end = std::min(n, start + batch_size);
    const std::span<const std::size_t> batch(order.data() + start, end - start);
    std::fill(grad.begin(), grad.end(), 0.0F);
    const float scale = 1.0F / static_cast<float>(batch.size());
    std::size_t at = 0;
    std::uint64_t micro = 0;
    for (const auto& group : group_by_tokens(episodes, batch, options_.max_batch_tokens)) {
      const auto dropout_seed = derive_seed(
          options_.seed, {0xd409, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(start), micro++});
      const BatchResult r = model_.loss_and_gradient(group, grad, scale, dropout_seed);
      if (!r.finite) {
        stats.finite = false;
        return stats;
      }
      loss += r.loss_sum;
      for (int p : r.predictions) predicted[batch[at++]] = p;
    }
    seen += batch.size();
    adam_.step(model_.parameters(), grad, lr, options_.optimizer);
    ++total_steps_;
    ++stats.steps;
  }
  stats.mean_loss = seen == 0 ? 0.0 : loss / static_cast<double>(seen);
  if (!std::isfinite(stats.mean_loss)) stats.finite = false;
  if (!stats.stopped) {
    stats.predictions.reserve(n);
    for (std::size_t i = 0; i < n; ++i) stats.predictions.push_back({episodes[i].id, predicted[i], episodes[i].encoded.label});
  }
  return stats;
}

nlohmann::ordered_json Trainer::make_row(int epoch, const std::string& split, double lr,
                                         std::optional<double> train_loss,
                                         const std::vector<LabeledEpisode>& episodes,
                                         const std::vector<Prediction>& predictions) const {
  nlohmann::ordered_json row;
  row["log_version"] = 1;
  row["run_id"] = options_.run_id;
  row["config_hash"] = options_.config_hash;
  row["seed"] = options_.seed;
  row["task_kind"] = task_kind_name(options_.task_kind);
  row["k"] = options_.k;
  row["epoch"] = epoch;
  row["split"] = split;
  row["learning_rate"] = lr;
  row["train_loss"] = train_loss ? nlohmann::ordered_json(*train_loss) : nlohmann::ordered_json(nullptr);
  const auto records = classify_predictions(episodes, predictions);
  const auto metrics = factorize(records, options_.task_kind);
  const auto flat = metrics_to_json(metrics);
  for (const auto& [key, value] : flat.items()) row[key] = value;
  if (options_.task_kind == TaskKind::kWithheldPair) append_reward_bins(row, reward_binned_metrics(records));
  return row;
}

TrainResult Trainer::run(const RowSink& sink, const CheckpointHook& on_checkpoint) {
  TrainResult result;
  const int total = options_.optimizer.epochs;
  auto fail = [&](int epoch, const std::string& why) {
    result.failed = true;
    result.failure_reason = why + " at epoch " + std::to_string(epoch);
    result.last_epoch = epoch_;
    result.steps = total_steps_;
    return result;
  };

  if (epoch_ == 0) {
    const double lr0 = lr_schedule(options_.optimizer, 0, total);
    const EvalResult tr = evaluate_episodes(model_, *train_, options_.max_batch_tokens);
    const EvalResult va = evaluate_episodes(model_, *val_, options_.max_batch_tokens);
    if (!tr.finite || !va.finite) return fail(0, "non-finite loss");
    sink(make_row(0, "train", lr0, tr.mean_loss, *train_, tr.predictions));
    auto row = make_row(0, "val", lr0, tr.mean_loss, *val_, va.predictions);
    row["val_loss"] = va.mean_loss;
    sink(row);
  }

  for (int epoch = epoch_ + 1; epoch <= total; ++epoch) {
    const double lr = lr_schedule(options_.optimizer, epoch - 1, total);
    EpochStats stats = train_epoch(epoch);
    if (!stats.finite) return fail(epoch, "non-finite loss");
    if (stats.stopped && stats.steps == 0) break;

    const bool last = epoch == total || stats.stopped;
    if (last || epoch % std::max(1, options_.eval_every) == 0) {
      std::vector<Prediction> train_preds;
      if (options_.eval_train || stats.stopped) {
        EvalResult tr = evaluate_episodes(model_, *train_, options_.max_batch_tokens);
        train_preds = std::move(tr.predictions);
      } else {
        train_preds = std::move(stats.predictions);
      }
      const EvalResult va = evaluate_episodes(model_, *val_, options_.max_batch_tokens);
      if (!va.finite) return fail(epoch, "non-finite validation loss");
      sink(make_row(epoch, "train", lr, stats.mean_loss, *train_, train_preds));
      auto row = make_row(epoch, "val", lr, stats.mean_loss, *val_, va.predictions);
      row["val_loss"] = va.mean_loss;
      sink(row);
    }
    epoch_ = epoch;

    if (!options_.checkpoint_path.empty() &&
        (last || (options_.checkpoint_every > 0 && epoch % options_.checkpoint_every == 0))) {
      save_checkpoint(options_.checkpoint_path);
      if (on_checkpoint) on_checkpoint(epoch);
    }
    if (stats.stopped) break;
  }
  result.last_epoch = epoch_;
  result.steps = total_steps_;
  return result;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + tmp);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod(out, kCheckpointVersion);
    const auto hash_len = static_cast<std::uint32_t>(options_.config_hash.size());
    write_pod(out, hash_len);
    out.write(options_.config_hash.data(), hash_len);
    write_pod(out, static_cast<std::int32_t>(epoch_));
    write_pod(out, options_.seed);
    write_pod(out, static_cast<std::int64_t>(total_steps_));
    write_pod(out, adam_.steps());
    const auto params = model_.parameters();
    write_pod(out, static_cast<std::uint64_t>(params.size()));
    out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size_bytes()));
    out.write(reinterpret_cast<const char*>(adam_.first_moment().data()),
              static_cast<std::streamsize>(params.size_bytes()));
    out.write(reinterpret_cast<const char*>(adam_.second_moment().data()),
              static_cast<std::streamsize>(params.size_bytes()));
    if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move checkpoint into place: " + ec.message());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::kParse, "not a checkpoint file: " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto hash_len = read_pod<std::uint32_t>(in);
  if (hash_len > 1024) throw Error(ErrorCode::kParse, "corrupt checkpoint header");
  std::string hash(hash_len, '\0');
  in.read(hash.data(), hash_len);
  if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated");
  if (hash != options_.config_hash) {
    throw Error(ErrorCode::kInvalidConfig, "checkpoint config hash " + hash + " does not match " + options_.config_hash);
  }
  const auto epoch = read_pod<std::int32_t>(in);
  const auto seed = read_pod<std::uint64_t>(in);
  if (seed != options_.seed) throw Error(ErrorCode::kInvalidConfig, "checkpoint seed mismatch");
  const auto total_steps = read_pod<std::int64_t>(in);
  const auto adam_steps = read_pod<std::uint64_t>(in);
  const auto n = read_pod<std::uint64_t>(in);
  if (n != model_.parameter_count()) throw Error(ErrorCode::kShapeMismatch, "checkpoint parameter count mismatch");
  std::vector<float> params;
  read_floats(in, params, n);
  read_floats(in, adam_.first_moment(), n);
  read_floats(in, adam_.second_moment(), n);
  std::copy(params.begin(), params.end(), model_.parameters().begin());
  adam_.set_steps(adam_steps);
  epoch_ = epoch;
  total_steps_ = total_steps;
}

}  // namespace alchemy
