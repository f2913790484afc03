#include "glyrl/episode.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "glyrl/common.hpp"

namespace glyrl {

void save_episode_csv(const EpisodeLog& log, const std::string& path) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");

    char buf[256];
    std::snprintf(buf, sizeof buf, "#meta patient_id=%u first_day=%u weight=%.17g nominal_tdd=%.17g\n",
                  log.patient_id, log.first_day, log.weight, log.nominal_tdd);
    f << buf;
    for (const auto& m : log.meals) {
        std::snprintf(buf, sizeof buf, "#meal %d %.17g %d\n", m.time_min, m.carbs, m.announced ? 1 : 0);
        f << buf;
    }
    f << "step,cgm,rate_uph,bolus_u,carbs_announced,flags\n";
    for (size_t i = 0; i < log.steps.size(); ++i) {
        const auto& s = log.steps[i];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%u\n",
                      i, s.cgm, s.rate_uph, s.bolus_u, s.carbs_announced, s.flags);
        f << buf;
    }
    if (!f) throw std::runtime_error("short write to " + path);
}

EpisodeLog load_episode_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    EpisodeLog log;
    std::string line;
    bool header_seen = false;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("#meta ", 0) == 0) {
                unsigned pid = 0, day = 0;
                double w = 0, tdd = 0;
                if (std::sscanf(line.c_str(), "#meta patient_id=%u first_day=%u weight=%lg nominal_tdd=%lg",
                                &pid, &day, &w, &tdd) != 4) {
                    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad #meta line");
                }
                log.patient_id = pid;
                log.first_day = day;
                log.weight = w;
                log.nominal_tdd = tdd;
            } else if (line.rfind("#meal ", 0) == 0) {
                MealEvent m;
                int ann = 1;
                if (std::sscanf(line.c_str(), "#meal %d %lg %d", &m.time_min, &m.carbs, &ann) != 3) {
                    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad #meal line");
                }
                m.announced = ann != 0;
                log.meals.push_back(m);
            }
            continue;
        }
        if (!header_seen) {
            if (line.rfind("step,", 0) != 0) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected step header row");
            }
            header_seen = true;
            continue;
        }
        StepRecord s;
        size_t idx = 0;
        unsigned flags = 0;
        if (std::sscanf(line.c_str(), "%zu,%lg,%lg,%lg,%lg,%u",
                        &idx, &s.cgm, &s.rate_uph, &s.bolus_u, &s.carbs_announced, &flags) != 6) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad step row");
        }
        if (idx != log.steps.size()) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": step index out of order");
        }
        s.flags = static_cast<uint8_t>(flags);
        log.steps.push_back(s);
    }
    require(header_seen, path + ": no step rows found");
    return log;
}

}  // namespace glyrl
