#pragma once

#include <map>
#include <string>
#include <vector>

#include "attnlab/model.hpp"
#include "attnlab/train.hpp"

namespace attnlab {

// Flat "section.key" -> string store behind every CLI command. Values stay
// strings until used, so a value given as --alpha 0.000005 is echoed back
// verbatim. Precedence: built-in defaults < config file < command line.
class RunConfig {
  public:
    static RunConfig defaults();
    static const std::vector<std::pair<std::string, std::string>>& known_keys();

    // INI-style file: [section] headers, key = value lines, # or ; comments.
    // Unknown keys raise ConfigError.
    void load_file(const std::string& path);
    void set(const std::string& key, std::string value); // ConfigError on unknown key

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    long long get_i64(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Full config as INI text; parsing it back reproduces this object.
    std::string echo_text() const;
    void write_echo(const std::string& path) const;

    ModelConfig model_config() const; // vocab_size may still be 0 (derive from corpus)
    TrainConfig train_config() const;

  private:
    std::map<std::string, std::string> kv_;
};

} // namespace attnlab
