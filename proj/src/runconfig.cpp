#include "attnlab/runconfig.hpp"

#include <cctype>
#include <climits>
#include <cstdlib>
#include <fstream>

#include "attnlab/errors.hpp"

namespace attnlab {

namespace {

// Defaults table; the order here is the order echo_text writes sections.
const std::vector<std::pair<std::string, std::string>>& table() {
    static const std::vector<std::pair<std::string, std::string>> t = {
        {"run.seed", "1337"},
        {"run.out_dir", "out"},
        {"run.corpus", "data/corpus.txt"},
        {"run.checkpoint", ""},
        {"run.task", "data/classify_toy.tsv"},
        {"model.variant", "base"},
        {"model.n_layer", "4"},
        {"model.n_head", "4"},
        {"model.n_embd", "128"},
        {"model.block_size", "128"},
        {"model.vocab_size", "0"},
        {"model.tie_embeddings", "true"},
        {"train.max_iters", "2000"},
        {"train.batch_size", "16"},
        {"train.accum_steps", "1"},
        {"train.lr_max", "0.0006"},
        {"train.lr_min", "0.00006"},
        {"train.warmup_iters", "100"},
        {"train.decay_iters", "2000"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.95"},
        {"train.weight_decay", "0.1"},
        {"train.grad_clip", "1.0"},
        {"train.alpha", "0.000005"},
        {"train.eval_interval", "100"},
        {"train.eval_iters", "8"},
        {"train.val_fraction", "0.1"},
        {"train.freeze_noise", "false"},
        {"sample.temperature", "0.8"},
        {"sample.max_new", "100"},
        {"sample.samples", "3"},
        {"sample.prompt", "the "},
        {"sample.noise_mode", "fresh"},
        {"estimate.pairs", "100000"},
        {"estimate.t", "128"},
        {"estimate.h", "128"},
        {"estimate.n_head", "4"},
        {"estimate.tied_weights", "false"},
        {"estimate.full_matrix", "false"},
        {"eval.steps", "300"},
        {"eval.lr", "0.05"},
        {"eval.classes", "2"},
        {"eval.holdout_fraction", "0.25"},
        {"eval.shuffle_labels", "false"},
    };
    return t;
}

std::string trim(const std::string& s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a])) != 0) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1])) != 0) --b;
    return s.substr(a, b - a);
}

bool needs_quotes(const std::string& v) {
    if (v.empty()) return true;
    return std::isspace(static_cast<unsigned char>(v.front())) != 0 ||
           std::isspace(static_cast<unsigned char>(v.back())) != 0;
}

} // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::known_keys() { return table(); }

RunConfig RunConfig::defaults() {
    RunConfig c;
    for (const auto& [k, v] : table()) c.kv_.emplace(k, v);
    return c;
}

void RunConfig::set(const std::string& key, std::string value) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown configuration key: " + key);
    it->second = std::move(value);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::string line;
    std::string section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string s = trim(line);
        if (s.empty() || s.front() == '#' || s.front() == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError(path + ":" + std::to_string(line_no) + ": unterminated section");
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw ConfigError(path + ":" + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        const std::string full = section.empty() ? key : section + "." + key;
        try {
            set(full, std::move(value));
        } catch (const ConfigError&) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": unknown configuration key: " + full);
        }
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown configuration key: " + key);
    return it->second;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* kind) {
    throw ConfigError("value '" + v + "' for " + key + " is not " + kind);
}

} // namespace

long long RunConfig::get_i64(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const long long r = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') bad_value(key, v, "an integer");
    return r;
}

int RunConfig::get_int(const std::string& key) const {
    const long long r = get_i64(key);
    if (r < INT_MIN || r > INT_MAX) bad_value(key, get(key), "a 32-bit integer");
    return static_cast<int>(r);
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const unsigned long long r = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
        bad_value(key, v, "an unsigned integer");
    return r;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') bad_value(key, v, "a number");
    return r;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

std::string RunConfig::echo_text() const {
    std::string out;
    std::string section;
    for (const auto& [k, def] : table()) {
        (void)def;
        const size_t dot = k.find('.');
        const std::string sec = k.substr(0, dot);
        const std::string name = k.substr(dot + 1);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        const std::string& v = kv_.at(k);
        out += name + " = ";
        if (needs_quotes(v))
            out += "\"" + v + "\"";
        else
            out += v;
        out += "\n";
    }
    return out;
}

void RunConfig::write_echo(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write config echo: " + path);
    out << echo_text();
    out.flush();
    if (!out) throw DataError("config echo write failed: " + path);
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.variant = parse_variant(get("model.variant"));
    m.n_layer = get_int("model.n_layer");
    m.n_head = get_int("model.n_head");
    m.n_embd = get_int("model.n_embd");
    m.block_size = get_int("model.block_size");
    m.vocab_size = get_int("model.vocab_size");
    m.tie_embeddings = get_bool("model.tie_embeddings");
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.max_iters = get_int("train.max_iters");
    t.batch_size = get_int("train.batch_size");
    t.accum_steps = get_int("train.accum_steps");
    t.lr_max = get_double("train.lr_max");
    t.lr_min = get_double("train.lr_min");
    t.warmup_iters = get_int("train.warmup_iters");
    t.decay_iters = get_int("train.decay_iters");
    t.beta1 = get_double("train.beta1");
    t.beta2 = get_double("train.beta2");
    t.weight_decay = get_double("train.weight_decay");
    t.grad_clip = get_double("train.grad_clip");
    t.alpha = get_double("train.alpha");
    t.eval_interval = get_int("train.eval_interval");
    t.eval_iters = get_int("train.eval_iters");
    t.val_fraction = get_double("train.val_fraction");
    t.freeze_noise = get_bool("train.freeze_noise");
    t.seed = get_u64("run.seed");
    return t;
}

} // namespace attnlab
