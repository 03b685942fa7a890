#include "instcache/model_factory.hpp"

#include <map>

#include "instcache/error.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/power_law_model.hpp"
#include "instcache/remote_model.hpp"

namespace instcache {

namespace {

std::map<std::string, std::string> parse_kv(const std::string& s) {
    std::map<std::string, std::string> kv;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string item = s.substr(pos, comma - pos);
        const size_t eq = item.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument("model spec option \"" + item + "\" is not key=value");
        }
        kv[item.substr(0, eq)] = item.substr(eq + 1);
        pos = comma + 1;
    }
    return kv;
}

int to_int(const std::string& v, const std::string& key) {
    try {
        return std::stoi(v);
    } catch (const std::exception&) {
        throw InvalidArgument("model spec option " + key + "=" + v + " is not an integer");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw InvalidArgument("model spec option " + key + "=" + v + " is not a number");
    }
}

void reject_unknown(const std::map<std::string, std::string>& kv,
                    std::initializer_list<const char*> known, const std::string& kind) {
    for (const auto& [k, v] : kv) {
        bool ok = false;
        for (const char* name : known) {
            if (k == name) {
                ok = true;
                break;
            }
        }
        if (!ok) throw InvalidArgument("unknown option \"" + k + "\" for model kind " + kind);
    }
}

} // namespace

std::unique_ptr<TokenModel> model_from_spec(const std::string& spec_string) {
    const size_t colon = spec_string.find(':');
    const std::string kind = spec_string.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec_string.substr(colon + 1);

    if (kind == "uniform" || kind == "powerlaw") {
        auto kv = parse_kv(arg);
        reject_unknown(kv, {"v", "alpha", "eos_rank", "max_len"}, kind);
        PowerLawModelConfig cfg;
        cfg.kind_label = kind;
        if (!kv.count("v")) throw InvalidArgument(kind + " model needs v=<vocab size>");
        cfg.vocab_size = to_int(kv.at("v"), "v");
        if (kind == "uniform") {
            cfg.alpha = 0.0;
            if (kv.count("alpha")) throw InvalidArgument("uniform model takes no alpha");
        } else {
            if (!kv.count("alpha")) throw InvalidArgument("powerlaw model needs alpha=");
            cfg.alpha = to_double(kv.at("alpha"), "alpha");
            if (!(cfg.alpha > 0.0)) throw InvalidArgument("powerlaw alpha must be > 0");
        }
        if (kv.count("eos_rank")) cfg.eos_rank = to_int(kv.at("eos_rank"), "eos_rank");
        if (kv.count("max_len")) cfg.max_len = to_int(kv.at("max_len"), "max_len");
        return std::make_unique<PowerLawModel>(cfg);
    }

    if (kind == "ngram") {
        auto kv = parse_kv(arg);
        reject_unknown(kv, {"path"}, kind);
        if (!kv.count("path")) throw InvalidArgument("ngram model needs path=<artifact>");
        return NgramModel::load(kv.at("path"));
    }

    if (kind == "external") {
        RemoteModelConfig cfg;
        if (arg.rfind("cmd=", 0) == 0) {
            cfg.endpoint = "cmd:" + arg.substr(4);
        } else {
            auto kv = parse_kv(arg);
            reject_unknown(kv, {"tcp", "batch", "max_len", "timeout_ms"}, kind);
            if (!kv.count("tcp")) {
                throw InvalidArgument("external model needs tcp=host:port or cmd=<command>");
            }
            cfg.endpoint = "tcp:" + kv.at("tcp");
            if (kv.count("batch")) cfg.batch_size = to_int(kv.at("batch"), "batch");
            if (kv.count("max_len")) cfg.max_len = to_int(kv.at("max_len"), "max_len");
            if (kv.count("timeout_ms")) cfg.timeout_ms = to_int(kv.at("timeout_ms"), "timeout_ms");
        }
        return std::make_unique<RemoteModel>(cfg);
    }

    throw InvalidArgument("unknown model kind: \"" + kind +
                          "\" (expected uniform, powerlaw, ngram, or external)");
}

} // namespace instcache
