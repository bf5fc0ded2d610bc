#include "taflab/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "taflab/errors.hpp"

namespace taflab {

namespace {

// float round trip at max_digits10 so echo -> parse is value-exact
std::string fmt_float(float v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

struct Key {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_num(const std::string& key, const std::string& v) {
    try {
        if constexpr (std::is_same_v<T, float>) return std::stof(v);
        else if constexpr (std::is_same_v<T, int>) return std::stoi(v);
        else return static_cast<T>(std::stoull(v));
    } catch (const std::exception&) {
        throw ConfigError("config: cannot parse value '" + v + "' for key '" + key + "'");
    }
}

const std::vector<Key>& key_table() {
    static const std::vector<Key> keys = [] {
        std::vector<Key> k;
        auto num = [&k](const std::string& name, auto member) {
            using T = std::decay_t<decltype(std::declval<RunConfig>().*member)>;
            k.push_back({name,
                         [name, member](RunConfig& c, const std::string& v) {
                             c.*member = parse_num<T>(name, v);
                         },
                         [member](const RunConfig& c) {
                             if constexpr (std::is_same_v<T, float>) return fmt_float(c.*member);
                             else return std::to_string(c.*member);
                         }});
        };
        auto str = [&k](const std::string& name, std::string RunConfig::* member) {
            k.push_back({name,
                         [member](RunConfig& c, const std::string& v) { c.*member = v; },
                         [member](const RunConfig& c) { return c.*member; }});
        };
        auto data_num = [&k](const std::string& name, auto member) {
            using T = std::decay_t<decltype(std::declval<SyntheticSpec>().*member)>;
            k.push_back({name,
                         [name, member](RunConfig& c, const std::string& v) {
                             c.data.*member = parse_num<T>(name, v);
                         },
                         [member](const RunConfig& c) {
                             if constexpr (std::is_same_v<T, float>) return fmt_float(c.data.*member);
                             else return std::to_string(c.data.*member);
                         }});
        };

        data_num("data.frames", &SyntheticSpec::frames);
        data_num("data.height", &SyntheticSpec::height);
        data_num("data.width", &SyntheticSpec::width);
        data_num("data.sprite", &SyntheticSpec::sprite);
        data_num("data.phase_split", &SyntheticSpec::phase_split);
        data_num("data.noise_floor", &SyntheticSpec::noise_floor);
        data_num("data.train_size", &SyntheticSpec::train_size);
        data_num("data.val_size", &SyntheticSpec::val_size);
        data_num("data.seed", &SyntheticSpec::seed);

        num("alpha", &RunConfig::alpha);
        num("taf.epochs", &RunConfig::taf_epochs);
        num("batch_size", &RunConfig::batch_size);
        num("taf.lr", &RunConfig::taf_lr);
        num("taf.lr_decay", &RunConfig::taf_lr_decay);
        num("taf.lr_decay_epoch", &RunConfig::taf_lr_decay_epoch);

        num("attack.epsilon", &RunConfig::epsilon255);
        num("attack.beta", &RunConfig::beta255);
        num("attack.steps", &RunConfig::steps);
        num("attack.frames_n", &RunConfig::frames_n);
        str("attack.label_policy", &RunConfig::label_policy);
        str("attack.inclusion", &RunConfig::inclusion);
        str("attack.loss", &RunConfig::loss);

        num("train.epochs", &RunConfig::train_epochs);
        num("train.lr", &RunConfig::train_lr);
        num("train.lr_decay", &RunConfig::train_lr_decay);
        num("train.lr_decay_epoch", &RunConfig::train_lr_decay_epoch);

        num("seed", &RunConfig::seed);
        str("out", &RunConfig::out);
        str("dataset_dir", &RunConfig::dataset_dir);
        str("checkpoint", &RunConfig::checkpoint);
        str("taf_checkpoint", &RunConfig::taf_checkpoint);
        num("severity", &RunConfig::severity);
        num("dump_clips", &RunConfig::dump_clips);
        str("ablate_axis", &RunConfig::ablate_axis);
        return k;
    }();
    return keys;
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : key_table()) {
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

AttackConfig RunConfig::attack_config() const {
    AttackConfig a;
    a.epsilon = epsilon255 / 255.0f;
    a.beta = beta255 / 255.0f;
    a.steps = steps;
    a.frames_n = frames_n;
    if (label_policy == "adaptive") a.label_policy = LabelPolicy::random_if_correct;
    else if (label_policy == "true") a.label_policy = LabelPolicy::always_true;
    else if (label_policy == "random") a.label_policy = LabelPolicy::always_random;
    else throw ConfigError("config: unknown value '" + label_policy + "' for key 'attack.label_policy'");
    if (inclusion == "all") a.inclusion = InclusionPolicy::all;
    else if (inclusion == "correct") a.inclusion = InclusionPolicy::correct_only;
    else if (inclusion == "incorrect") a.inclusion = InclusionPolicy::incorrect_only;
    else throw ConfigError("config: unknown value '" + inclusion + "' for key 'attack.inclusion'");
    if (loss == "cam") a.loss = LossKind::cam;
    else if (loss == "ce") a.loss = LossKind::cross_entropy;
    else throw ConfigError("config: unknown value '" + loss + "' for key 'attack.loss'");
    return a;
}

TafConfig RunConfig::taf_config() const {
    TafConfig t;
    t.alpha = alpha;
    t.epochs = taf_epochs;
    t.batch_size = batch_size;
    t.lr = {taf_lr, taf_lr_decay, taf_lr_decay_epoch};
    t.attack = attack_config();
    t.seed = seed;
    return t;
}

LrSchedule RunConfig::train_schedule() const {
    return {train_lr, train_lr_decay, train_lr_decay_epoch};
}

RunConfig parse_config(const std::string& file_path,
                       const std::vector<std::pair<std::string, std::string>>& flags) {
    RunConfig cfg;
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw ConfigError("config: cannot open " + file_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: malformed line " + std::to_string(lineno) + " in " +
                                  file_path);
            apply(cfg, line.substr(0, eq), line.substr(eq + 1));
        }
    }
    for (const auto& [key, value] : flags) apply(cfg, key, value);
    return cfg;
}

std::string echo_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : key_table()) out += k.name + "=" + k.get(cfg) + "\n";
    return out;
}

}  // namespace taflab
