#include <cstdio>
#include <map>
#include <sstream>

#include "vars/dataset.hpp"
#include "vars/errors.hpp"

using nlohmann::json;

namespace vars {

namespace {

constexpr std::array<std::string_view, 5> kSeverityNames{"NoCard", "NoCard/Yellow", "Yellow",
                                                         "Yellow/Red", "Red"};

template <typename E, typename Get>
PropertyDistribution distribution(std::string property, const std::vector<const Annotation*>& rows,
                                  Get get) {
    std::vector<std::size_t> counts(enum_count<E>(), 0);
    for (const Annotation* a : rows) ++counts[static_cast<std::size_t>(get(*a))];
    PropertyDistribution d{std::move(property), {}, rows.size()};
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double pct = rows.empty() ? 0.0 : 100.0 * static_cast<double>(counts[i]) / rows.size();
        d.percent.emplace_back(std::string(EnumNames<E>::names[i]), pct);
    }
    return d;
}

}  // namespace

const PropertyDistribution& StatsReport::property(std::string_view name) const {
    for (const auto& p : properties)
        if (p.property == name) return p;
    throw ContractError("unknown property '" + std::string(name) + "'");
}

double StatsReport::percent(std::string_view prop, std::string_view value) const {
    for (const auto& [v, pct] : property(prop).percent)
        if (v == value) return pct;
    throw ContractError("unknown value '" + std::string(value) + "' for property '" + std::string(prop) + "'");
}

StatsReport dataset_stats(const Manifest& m) {
    if (m.actions.empty()) throw DomainError("dataset_stats: manifest has no actions");
    StatsReport r;
    r.actions = m.actions.size();

    std::map<std::size_t, std::size_t> views;
    std::size_t clips = 0;
    std::vector<const Annotation*> annotated, offences;
    for (const FoulAction& a : m.actions) {
        clips += a.clips.size();
        ++views[a.clips.size()];
        if (!a.annotation) continue;
        annotated.push_back(&*a.annotation);
        if (a.annotation->offence != Offence::NoOffence) offences.push_back(&*a.annotation);
    }
    r.annotated = annotated.size();
    r.mean_clips = static_cast<double>(clips) / static_cast<double>(m.actions.size());
    r.views_histogram.assign(views.begin(), views.end());

    std::size_t no_offence = 0;
    for (const Annotation* a : annotated) no_offence += a->offence == Offence::NoOffence;
    r.referee_error_rate =
        annotated.empty() ? 0.0 : static_cast<double>(no_offence) / static_cast<double>(annotated.size());

    r.properties.push_back(distribution<Offence>("offence", annotated, [](const Annotation& a) { return a.offence; }));
    r.properties.push_back(
        distribution<ActionClass>("action_class", annotated, [](const Annotation& a) { return a.action_class; }));
    {
        std::array<std::size_t, 5> counts{};
        for (const Annotation* a : offences)
            if (a->severity >= 1 && a->severity <= 5) ++counts[static_cast<std::size_t>(a->severity - 1)];
        PropertyDistribution d{"severity", {}, offences.size()};
        for (std::size_t i = 0; i < 5; ++i) {
            const double pct = offences.empty() ? 0.0 : 100.0 * static_cast<double>(counts[i]) / offences.size();
            d.percent.emplace_back(std::string(kSeverityNames[i]), pct);
        }
        r.properties.push_back(std::move(d));
    }
    r.properties.push_back(distribution<Contact>("contact", annotated, [](const Annotation& a) { return a.contact; }));
    r.properties.push_back(distribution<Bodypart>("bodypart", annotated, [](const Annotation& a) { return a.bodypart; }));
    r.properties.push_back(distribution<UpperBodyPart>("upper_body_part", annotated,
                                                       [](const Annotation& a) { return a.upper_body_part; }));
    r.properties.push_back(
        distribution<YesNo>("try_to_play", annotated, [](const Annotation& a) { return a.try_to_play; }));
    r.properties.push_back(
        distribution<PlayBall>("play_ball", annotated, [](const Annotation& a) { return a.play_ball; }));
    r.properties.push_back(distribution<Handball>("handball", annotated, [](const Annotation& a) { return a.handball; }));
    r.properties.push_back(distribution<HandballOffence>("handball_offence", annotated,
                                                         [](const Annotation& a) { return a.handball_offence; }));

    for (std::size_t c = 0; c < enum_count<ActionClass>(); ++c) {
        ClassSeverity cs{static_cast<ActionClass>(c)};
        std::size_t failures = 0;
        for (const Annotation* a : annotated) {
            if (static_cast<std::size_t>(a->action_class) != c) continue;
            ++cs.actions;
            if (a->offence == Offence::NoOffence) {
                ++failures;
            } else if (a->severity >= 1 && a->severity <= 5) {
                ++cs.severity_counts[static_cast<std::size_t>(a->severity - 1)];
            }
        }
        if (cs.actions > 0)
            cs.success_rate = 1.0 - static_cast<double>(failures) / static_cast<double>(cs.actions);
        const double carded = static_cast<double>(cs.severity_counts[0] + cs.severity_counts[2] + cs.severity_counts[4]);
        if (carded > 0) {
            cs.no_card = cs.severity_counts[0] / carded;
            cs.yellow = cs.severity_counts[2] / carded;
            cs.red = cs.severity_counts[4] / carded;
        }
        r.per_class.push_back(cs);
    }
    return r;
}

json to_json(const StatsReport& r) {
    json props = json::object();
    for (const auto& p : r.properties) {
        json values = json::object();
        for (const auto& [v, pct] : p.percent) values[v] = pct;
        props[p.property] = json{{"counted", p.counted}, {"percent", values}};
    }
    json hist = json::object();
    for (const auto& [n, count] : r.views_histogram) hist[std::to_string(n)] = count;
    json classes = json::array();
    for (const auto& c : r.per_class) {
        classes.push_back(json{{"action_class", to_string(c.action_class)},
                               {"actions", c.actions},
                               {"success_rate", c.success_rate},
                               {"severity_counts", c.severity_counts},
                               {"no_card", c.no_card},
                               {"yellow", c.yellow},
                               {"red", c.red}});
    }
    return json{{"actions", r.actions},
                {"annotated", r.annotated},
                {"mean_clips_per_action", r.mean_clips},
                {"views_histogram", hist},
                {"referee_error_rate", r.referee_error_rate},
                {"properties", props},
                {"per_class", classes}};
}

std::string render_stats_table(const StatsReport& r) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "actions %zu (annotated %zu), mean clips/action %.2f, referee error rate %.1f%%\n",
                  r.actions, r.annotated, r.mean_clips, 100.0 * r.referee_error_rate);
    os << buf << "views:";
    for (const auto& [n, count] : r.views_histogram) os << "  " << n << "=" << count;
    os << "\n\n";
    for (const auto& p : r.properties) {
        std::snprintf(buf, sizeof buf, "%-18s (n=%zu)\n", p.property.c_str(), p.counted);
        os << buf;
        for (const auto& [v, pct] : p.percent) {
            std::snprintf(buf, sizeof buf, "  %-18s %6.1f\n", v.c_str(), pct);
            os << buf;
        }
    }
    os << "\n";
    std::snprintf(buf, sizeof buf, "%-18s %7s %9s %8s %8s %8s\n", "Foul class", "actions", "succ.rate", "NoCard",
                  "Yellow", "Red");
    os << buf;
    for (const auto& c : r.per_class) {
        std::snprintf(buf, sizeof buf, "%-18s %7zu %9.2f %8.2f %8.2f %8.2f\n",
                      std::string(to_string(c.action_class)).c_str(), c.actions, c.success_rate, c.no_card,
                      c.yellow, c.red);
        os << buf;
    }
    return os.str();
}

}  // namespace vars
