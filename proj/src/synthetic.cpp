#include <cmath>
#include <numbers>
#include <random>

#include "affar/data.hpp"
#include "affar/error.hpp"

namespace affar {

std::vector<DomainDataset> generate_synthetic_domains(const SynthShiftSpec& spec) {
  if (spec.num_domains < 2) throw ConfigError("synthetic spec needs at least 2 domains");
  if (spec.num_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (spec.channels < 1 || spec.timesteps < 2 || spec.windows_per_class < 1) {
    throw ConfigError("synthetic spec has non-positive shape");
  }
  const auto k = static_cast<std::size_t>(spec.num_domains);
  for (const auto* v : {&spec.amplitude, &spec.phase, &spec.noise, &spec.drift}) {
    if (v->size() != k) throw ConfigError("synthetic spec needs one shift value per domain");
  }
  const double two_pi = 2.0 * std::numbers::pi;
  const auto channels = static_cast<std::size_t>(spec.channels);
  const auto timesteps = static_cast<std::size_t>(spec.timesteps);

  std::vector<DomainDataset> out;
  for (std::size_t d = 0; d < k; ++d) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(d)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);

    DomainDataset ds;
    ds.domain_id = static_cast<int>(d);
    ds.name = "synth" + std::to_string(d);
    for (int rep = 0; rep < spec.windows_per_class; ++rep) {
      for (int c = 0; c < spec.num_classes; ++c) {
        // Class c oscillates at c+1 cycles per window with a second harmonic;
        // each channel has its own fixed phase lag.
        const double freq = static_cast<double>(c + 1);
        const double window_phase = jitter(rng);
        SensorWindow w;
        w.values = Matrix(channels, timesteps);
        w.activity = c;
        w.domain = static_cast<int>(d);
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const double lag = 0.7 * static_cast<double>(ch) + spec.phase[d] + window_phase;
          for (std::size_t t = 0; t < timesteps; ++t) {
            const double u = two_pi * freq * static_cast<double>(t) / static_cast<double>(timesteps);
            const double clean = std::sin(u + lag) + 0.5 * std::sin(2.0 * u + 2.0 * lag);
            w.values(ch, t) = spec.amplitude[d] * clean + spec.drift[d] + spec.noise[d] * noise(rng);
          }
        }
        ds.windows.push_back(std::move(w));
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

DGTask generate_synthetic(const SynthShiftSpec& spec, double val_fraction) {
  auto domains = generate_synthetic_domains(spec);
  return build_task(domains, spec.num_classes, spec.test_domain, val_fraction, spec.seed);
}

SynthShiftSpec shifted_synth_spec(int num_domains, std::uint64_t seed) {
  SynthShiftSpec spec;
  spec.num_domains = num_domains;
  spec.seed = seed;
  static constexpr double kAmp[] = {0.5, 1.0, 2.0, 3.0, 0.75, 1.5};
  static constexpr double kPhase[] = {0.0, 0.8, 1.6, 2.4, 0.4, 1.2};
  static constexpr double kNoise[] = {0.3, 0.2, 0.4, 0.3, 0.25, 0.35};
  static constexpr double kDrift[] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  for (int d = 0; d < num_domains; ++d) {
    const auto i = static_cast<std::size_t>(d % 6);
    spec.amplitude.push_back(kAmp[i]);
    spec.phase.push_back(kPhase[i]);
    spec.noise.push_back(kNoise[i]);
    spec.drift.push_back(kDrift[i]);
  }
  return spec;
}

}  // namespace affar
