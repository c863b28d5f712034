//! Per-round energy, time, and monetary cost of a data owner.
//!
//! A data owner spends CPU energy on local training and radio energy on
//! uploading the model update. Both convert to currency through the unit
//! energy cost `gamma`. Effort is measured in sample-epochs: local epochs
//! times local data size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("invalid {field}: must be finite and strictly positive")]
    InvalidProfile { field: &'static str },
    #[error("effort must be finite and non-negative")]
    BadEffort,
}

/// Uplink parameters of one data owner. `model_size` is bits per round and
/// may be zero (nothing to upload); all other fields are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommProfile<S> {
    /// Transmit power in watts.
    pub transmission_power: S,
    /// Channel bandwidth in hertz.
    pub bandwidth: S,
    /// Dimensionless channel gain.
    pub channel_gain: S,
    /// Noise power in watts.
    pub noise_power: S,
    /// Upload payload in bits per round.
    pub model_size: S,
}

/// Local hardware parameters of one data owner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile<S> {
    /// Effective switched capacitance of the chip.
    pub capacitance: S,
    /// Operating voltage.
    pub voltage: S,
    /// CPU frequency in cycles per second.
    pub cpu_frequency: S,
    /// CPU cycles needed per sample-epoch of effort.
    pub cycles_per_effort: S,
}

/// How energy converts to money.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMode {
    /// Energy from the physical comm/compute profiles.
    Physical,
    /// Energy from two direct coefficients, skipping the physical profiles.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams<S> {
    /// Currency per joule.
    pub gamma: S,
    pub mode: CostMode,
    /// Direct mode: joules per effort unit of local training.
    pub comp_energy_per_effort: S,
    /// Direct mode: joules per round for the upload.
    pub comm_energy_per_round: S,
}

fn positive<S: Real>(v: S, field: &'static str) -> Result<(), CostError> {
    if v.is_finite() && v > S::zero() {
        Ok(())
    } else {
        Err(CostError::InvalidProfile { field })
    }
}

fn non_negative<S: Real>(v: S, field: &'static str) -> Result<(), CostError> {
    if v.is_finite() && v >= S::zero() {
        Ok(())
    } else {
        Err(CostError::InvalidProfile { field })
    }
}

impl<S: Real> CommProfile<S> {
    pub fn validate(&self) -> Result<(), CostError> {
        positive(self.transmission_power, "transmission_power")?;
        positive(self.bandwidth, "bandwidth")?;
        positive(self.channel_gain, "channel_gain")?;
        positive(self.noise_power, "noise_power")?;
        non_negative(self.model_size, "model_size")
    }
}

impl<S: Real> ComputeProfile<S> {
    pub fn validate(&self) -> Result<(), CostError> {
        positive(self.capacitance, "capacitance")?;
        positive(self.voltage, "voltage")?;
        positive(self.cpu_frequency, "cpu_frequency")?;
        positive(self.cycles_per_effort, "cycles_per_effort")
    }
}

impl<S: Real> CostParams<S> {
    pub fn validate(&self) -> Result<(), CostError> {
        positive(self.gamma, "gamma")?;
        non_negative(self.comp_energy_per_effort, "comp_energy_per_effort")?;
        non_negative(self.comm_energy_per_round, "comm_energy_per_round")
    }
}

fn check_effort<S: Real>(effort: S) -> Result<(), CostError> {
    if effort.is_finite() && effort >= S::zero() {
        Ok(())
    } else {
        Err(CostError::BadEffort)
    }
}

/// Achievable uplink rate in bits per second:
/// `bandwidth * ln(1 + gain * power / noise)`.
pub fn transmission_rate<S: Real>(comm: &CommProfile<S>) -> Result<S, CostError> {
    comm.validate()?;
    let snr = comm.channel_gain * comm.transmission_power / comm.noise_power;
    Ok(comm.bandwidth * snr.ln_1p())
}

/// Seconds to upload one round's payload.
pub fn comm_time<S: Real>(comm: &CommProfile<S>) -> Result<S, CostError> {
    let rate = transmission_rate(comm)?;
    Ok(comm.model_size / rate)
}

/// Joules spent on one round's upload: transmit power times upload time.
pub fn comm_energy<S: Real>(comm: &CommProfile<S>) -> Result<S, CostError> {
    let t = comm_time(comm)?;
    Ok(comm.transmission_power * t)
}

/// Joules spent on local training for `effort` sample-epochs:
/// `capacitance * voltage^2 * cycles_per_effort * effort`.
/// Independent of CPU frequency.
pub fn comp_energy<S: Real>(compute: &ComputeProfile<S>, effort: S) -> Result<S, CostError> {
    compute.validate()?;
    check_effort(effort)?;
    Ok(compute.capacitance * compute.voltage * compute.voltage * compute.cycles_per_effort * effort)
}

/// Seconds of local training for `effort` sample-epochs.
pub fn comp_time<S: Real>(compute: &ComputeProfile<S>, effort: S) -> Result<S, CostError> {
    compute.validate()?;
    check_effort(effort)?;
    Ok(compute.cycles_per_effort * effort / compute.cpu_frequency)
}

/// Monetary cost of one round at the given effort.
pub fn total_cost<S: Real>(
    params: &CostParams<S>,
    comm: &CommProfile<S>,
    compute: &ComputeProfile<S>,
    effort: S,
) -> Result<S, CostError> {
    params.validate()?;
    check_effort(effort)?;
    let energy = match params.mode {
        CostMode::Physical => comp_energy(compute, effort)? + comm_energy(comm)?,
        CostMode::Direct => {
            params.comp_energy_per_effort * effort + params.comm_energy_per_round
        }
    };
    Ok(params.gamma * energy)
}

/// Marginal currency cost per effort unit. `total_cost` is affine in effort:
/// `effort_cost_rate * effort + fixed_round_cost`.
pub fn effort_cost_rate<S: Real>(params: &CostParams<S>, compute: &ComputeProfile<S>) -> S {
    match params.mode {
        CostMode::Physical => {
            params.gamma
                * compute.capacitance
                * compute.voltage
                * compute.voltage
                * compute.cycles_per_effort
        }
        CostMode::Direct => params.gamma * params.comp_energy_per_effort,
    }
}

/// Effort-independent currency cost per round (the upload).
pub fn fixed_round_cost<S: Real>(
    params: &CostParams<S>,
    comm: &CommProfile<S>,
) -> Result<S, CostError> {
    match params.mode {
        CostMode::Physical => Ok(params.gamma * comm_energy(comm)?),
        CostMode::Direct => Ok(params.gamma * params.comm_energy_per_round),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn comm_example() -> CommProfile<f64> {
        CommProfile {
            transmission_power: 0.1,
            bandwidth: 1e6,
            channel_gain: 1.0,
            noise_power: 1e-3,
            model_size: 4.61512e6,
        }
    }

    fn compute_example() -> ComputeProfile<f64> {
        ComputeProfile {
            capacitance: 2.0,
            voltage: 1.0,
            cpu_frequency: 1e9,
            cycles_per_effort: 3.0,
        }
    }

    #[test]
    fn rate_matches_log_form() {
        // 1e6 * ln(1 + 1 * 0.1 / 1e-3) = 1e6 * ln(101)
        let r = transmission_rate(&comm_example()).unwrap();
        assert_relative_eq!(r, 1e6 * 101f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(r, 4.61512e6, max_relative = 1e-3);
    }

    #[test]
    fn rate_scales_linearly_with_bandwidth() {
        let mut c = comm_example();
        let r1 = transmission_rate(&c).unwrap();
        c.bandwidth *= 2.0;
        assert_relative_eq!(transmission_rate(&c).unwrap(), 2.0 * r1, max_relative = 1e-12);
    }

    #[test]
    fn rate_rejects_bad_noise() {
        let mut c = comm_example();
        c.noise_power = 0.0;
        assert_eq!(
            transmission_rate(&c),
            Err(CostError::InvalidProfile { field: "noise_power" })
        );
    }

    #[test]
    fn upload_energy_near_tenth_joule_on_matched_payload() {
        // payload chosen equal to one second of rate, so energy ~ power
        let e = comm_energy(&comm_example()).unwrap();
        assert_relative_eq!(e, 0.1, max_relative = 1e-5);
    }

    #[test]
    fn upload_energy_zero_for_empty_payload() {
        let mut c = comm_example();
        c.model_size = 0.0;
        assert_eq!(comm_energy(&c).unwrap(), 0.0);
    }

    #[test]
    fn upload_time_near_one_second_and_consistent_with_rate() {
        let c = comm_example();
        let t = comm_time(&c).unwrap();
        assert_relative_eq!(t, 1.0, max_relative = 1e-5);
        let r = transmission_rate(&c).unwrap();
        assert_eq!(t * r, c.model_size);
    }

    #[test]
    fn training_energy_from_switching_model() {
        // 2 * 1^2 * 3 * 4 = 24 joules
        let e = comp_energy(&compute_example(), 4.0).unwrap();
        assert_relative_eq!(e, 24.0, max_relative = 1e-12);
    }

    #[test]
    fn training_energy_ignores_frequency() {
        let mut p = compute_example();
        let a = comp_energy(&p, 4.0).unwrap();
        p.cpu_frequency = 2e9;
        assert_eq!(comp_energy(&p, 4.0).unwrap(), a);
    }

    #[test]
    fn training_time_is_cycles_over_frequency() {
        let p = ComputeProfile {
            capacitance: 1.0,
            voltage: 1.0,
            cpu_frequency: 5.0,
            cycles_per_effort: 10.0,
        };
        assert_relative_eq!(comp_time(&p, 2.0).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn negative_effort_rejected() {
        assert_eq!(comp_energy(&compute_example(), -1.0), Err(CostError::BadEffort));
        assert_eq!(comp_time(&compute_example(), -1.0), Err(CostError::BadEffort));
    }

    #[test]
    fn direct_mode_total_cost() {
        // 0.003 * (0.01 * 100 + 0.1) = 0.0033
        let params = CostParams {
            gamma: 0.003,
            mode: CostMode::Direct,
            comp_energy_per_effort: 0.01,
            comm_energy_per_round: 0.1,
        };
        let c = total_cost(&params, &comm_example(), &compute_example(), 100.0).unwrap();
        assert_relative_eq!(c, 0.0033, max_relative = 1e-12);
    }

    #[test]
    fn physical_mode_total_cost_adds_both_energies() {
        let params = CostParams {
            gamma: 2.0,
            mode: CostMode::Physical,
            comp_energy_per_effort: 0.0,
            comm_energy_per_round: 0.0,
        };
        let comm = comm_example();
        let compute = compute_example();
        let want = 2.0 * (comp_energy(&compute, 4.0).unwrap() + comm_energy(&comm).unwrap());
        let got = total_cost(&params, &comm, &compute, 4.0).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn total_cost_is_affine_in_effort() {
        for mode in [CostMode::Physical, CostMode::Direct] {
            let params = CostParams {
                gamma: 0.7,
                mode,
                comp_energy_per_effort: 0.02,
                comm_energy_per_round: 0.4,
            };
            let comm = comm_example();
            let compute = compute_example();
            let rate = effort_cost_rate(&params, &compute);
            let fixed = fixed_round_cost(&params, &comm).unwrap();
            for e in [0.0, 1.0, 17.5, 4096.0] {
                let direct = total_cost(&params, &comm, &compute, e).unwrap();
                assert_relative_eq!(direct, rate * e + fixed, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn works_at_f32() {
        let c = CommProfile::<f32> {
            transmission_power: 0.1,
            bandwidth: 1e6,
            channel_gain: 1.0,
            noise_power: 1e-3,
            model_size: 4.61512e6,
        };
        let r = transmission_rate(&c).unwrap();
        assert!((r - 4.61512e6).abs() / 4.61512e6 < 1e-3);
    }
}
