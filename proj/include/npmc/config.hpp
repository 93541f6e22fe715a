#pragma once

#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "npmc/numerics.hpp"

namespace npmc {

inline constexpr std::string_view version = "0.1.0";

/// Every recognised configuration key with its default value.
inline const std::map<std::string, std::string>& config_defaults()
{
    static const std::map<std::string, std::string> defaults = {
        {"experiment.kind", "mse_vs_m"},
        {"experiment.id", ""},
        {"experiment.replicates", "50"},
        {"experiment.seed", "1"},
        {"experiment.samplers", "npmc,pmc,pmh"},
        {"model.m", "50"},
        {"model.pt", "0.8"},
        {"model.nu", "3"},
        {"model.rho", "1e-5"},
        {"model.sensors", "grid"},
        {"npmc.M", "50,100,200,500"},
        {"npmc.K", "10"},
        {"npmc.Mc", "sqrt"},
        {"bf.N", "400"},
        {"pmh.L", "1000,10000"},
        {"pmh.scale", "0.2"},
        {"pmh.cov", "0.22,4,0.4"},
        {"pmh.burn_in", "0.5"},
        {"verify.suite", "clipping"},
        {"output.path", ""},
        {"output.timing", "false"},
        {"output.trace", ""},
        {"run.workers", "0"},
    };
    return defaults;
}

/// Keys that never influence results (and are left out of the config hash).
inline bool is_runtime_key(const std::string& key)
{
    return key.rfind("output.", 0) == 0 || key.rfind("run.", 0) == 0;
}

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/*!
 * Flat key = value configuration.
 *
 * Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
 * Later assignments override earlier ones, so command-line overrides are
 * applied with set().
 */
class ConfigMap
{
  public:
    ConfigMap() : values_(config_defaults()) {}

    static ConfigMap parse(std::istream& is)
    {
        ConfigMap cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line))
        {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            const std::string body = trim(line);
            if (body.empty())
                continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos)
                throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
            cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
        }
        return cfg;
    }

    static ConfigMap parse(const std::string& text)
    {
        std::istringstream is(text);
        return parse(is);
    }

    void set(const std::string& key, const std::string& value)
    {
        if (!values_.contains(key))
            throw UsageError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// Applies "key=value".
    void set_assignment(const std::string& assignment)
    {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos)
            throw UsageError("--set expects key=value, got '" + assignment + "'");
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    const std::string& get(const std::string& key) const
    {
        const auto it = values_.find(key);
        if (it == values_.end())
            throw UsageError("unknown config key '" + key + "'");
        return it->second;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Sorted key = value listing of every result-affecting key.
    std::string canonical_text() const
    {
        std::string out;
        for (const auto& [k, v] : values_)
            if (!is_runtime_key(k))
                out += k + "=" + v + "\n";
        return out;
    }

    /// FNV-1a of canonical_text(), as 16 hex digits.
    std::string hash() const
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : canonical_text())
        {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

  private:
    std::map<std::string, std::string> values_;
};

//---------------------------------------------------------------------------//
// Typed accessors; errors name the offending key.
//---------------------------------------------------------------------------//

inline std::vector<std::string> split_list(const std::string& s, char sep = ',')
{
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep))
    {
        part = trim(part);
        if (!part.empty())
            parts.push_back(part);
    }
    return parts;
}

inline double parse_double(const std::string& key, const std::string& text)
{
    try
    {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos == text.size())
            return v;
    }
    catch (const std::exception&)
    {
    }
    throw UsageError("config key '" + key + "': expected a number, got '" + text + "'");
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& text)
{
    try
    {
        std::size_t pos = 0;
        if (!text.empty() && text[0] != '-')
        {
            const auto v = std::stoull(text, &pos);
            if (pos == text.size())
                return v;
        }
    }
    catch (const std::exception&)
    {
    }
    throw UsageError("config key '" + key + "': expected a nonnegative integer, got '" + text + "'");
}

inline std::size_t parse_positive(const std::string& key, const std::string& text)
{
    const auto v = parse_u64(key, text);
    if (v == 0)
        throw UsageError("config key '" + key + "': must be positive");
    return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> parse_positive_list(const std::string& key, const std::string& text)
{
    std::vector<std::size_t> out;
    for (const auto& part : split_list(text))
        out.push_back(parse_positive(key, part));
    if (out.empty())
        throw UsageError("config key '" + key + "': empty list");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1" || text == "yes")
        return true;
    if (text == "false" || text == "0" || text == "no")
        return false;
    throw UsageError("config key '" + key + "': expected true/false, got '" + text + "'");
}

} // namespace npmc
