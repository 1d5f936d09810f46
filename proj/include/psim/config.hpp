#ifndef PSIM_CONFIG_HPP
#define PSIM_CONFIG_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "psim/bloch.hpp"
#include "psim/budget.hpp"
#include "psim/device.hpp"
#include "psim/montecarlo.hpp"
#include "psim/photonstats.hpp"

namespace psim::config {

// One structured document for every command. Keys carry explicit units
// (gamma_per_ns, rep_period_ns, ...); unknown keys are rejected so typos in
// scientific ledgers fail loudly. Defaults are the calibrated reference
// device.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    std::string output_dir = "out";

    bloch::EmitterParams emitter{};
    bloch::PulseParams pulse{};
    double integration_rel_tol = 1e-9;

    device::DeviceParams device_params{};
    device::ModeProfile profile_E;
    device::ModeProfile profile_C;

    mc::SourceModel source{};
    stats::HomSetup hom{};
    budget::EfficiencyBudget efficiency{};

    RunConfig(); // calibrated defaults

    void validate() const;

    static RunConfig load_file(const std::string& path);
    static RunConfig load(std::istream& is, const std::string& origin = "<config>");

    // Resolved seed: CLI override wins, then the config value; an absent seed
    // throws so synthesis is never silently nondeterministic.
    std::uint64_t resolve_seed(std::optional<std::uint64_t> cli_seed) const;
};

// The device/profile block produced by calibrate_profiles, serialized as JSON
// (the regeneration path for the shipped defaults).
std::string calibration_json(const device::CalibrationTargets& targets = {});

} // namespace psim::config

#endif
