#pragma once

#include <cstdint>
#include <string>
#include <vector>

// The raw data product: per-step CGM / insulin / meal-announcement series for
// one patient over one or more days, on a 5-minute grid starting at midnight.

namespace glyrl {

inline constexpr int kStepMinutes = 5;
inline constexpr int kStepsPerDay = 288;

// StepRecord.flags bits
inline constexpr uint8_t kFlagClamped = 1;         // action hit the [0,10] U/h bound
inline constexpr uint8_t kFlagSafetyOverride = 2;  // safety layer forced zero insulin
inline constexpr uint8_t kFlagManualModified = 4;  // patient changed the calculator bolus
inline constexpr uint8_t kFlagManualAdded = 8;     // patient injected an extra bolus
inline constexpr uint8_t kFlagOpenLoop = 16;       // controller offline, constant basal

struct MealEvent {
    int time_min = 0;  // minutes since episode start
    double carbs = 0;  // g
    bool announced = true;
};

struct StepRecord {
    double cgm = 0;              // mg/dL reading at the START of the step
    double rate_uph = 0;         // insulin rate over the step, U/h
    double bolus_u = 0;          // bolus delivered at the step, U
    double carbs_announced = 0;  // g announced at this step (0 if none)
    uint8_t flags = 0;
};

struct EpisodeLog {
    uint32_t patient_id = 0;
    uint32_t first_day = 0;
    double weight = 0;       // kg
    double nominal_tdd = 0;  // U/day
    std::vector<StepRecord> steps;
    std::vector<MealEvent> meals;  // ground truth, including unannounced meals

    size_t days() const { return (steps.size() + kStepsPerDay - 1) / kStepsPerDay; }
    int clock_min(size_t step) const { return static_cast<int>((step * kStepMinutes) % (kStepsPerDay * kStepMinutes)); }
    uint32_t day_of(size_t step) const { return first_day + static_cast<uint32_t>(step / kStepsPerDay); }
};

// One file per episode: '#meta'/'#meal' comment lines, then a step-per-row CSV.
void save_episode_csv(const EpisodeLog& log, const std::string& path);
EpisodeLog load_episode_csv(const std::string& path);

}  // namespace glyrl
