use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentClass, AgentModel, CostSpec, FleetModel};
use crate::error::{Error, Result};
use crate::numkernel::{Matrix, Vector};

/// Parameters of the residential battery fleet. `Default` gives the
/// demand-response setup: 80 kWh batteries, leak factor in [0.96, 0.99],
/// unit input gain, noise variance 3 kWh², targets at 80 % and 40 % SoC.
#[derive(Clone, Debug, PartialEq)]
pub struct FleetParams {
    pub a_min: f64,
    pub a_max: f64,
    pub b: f64,
    pub noise_variance: f64,
    pub capacity_kwh: f64,
    /// Initial SoC range as fractions of capacity.
    pub initial_soc: (f64, f64),
    /// SoC targets of classes α and β as fractions of capacity.
    pub class_targets: (f64, f64),
    pub q: f64,
    pub q_terminal: f64,
    pub r: f64,
}

impl Default for FleetParams {
    fn default() -> Self {
        Self {
            a_min: 0.96,
            a_max: 0.99,
            b: 1.0,
            noise_variance: 3.0,
            capacity_kwh: 80.0,
            initial_soc: (0.4, 0.6),
            class_targets: (0.8, 0.4),
            q: 1.0,
            q_terminal: 1.0,
            r: 0.01,
        }
    }
}

/// Output of fleet sampling: dynamics, initial SoC, per-agent targets and
/// the scalar weight blocks.
#[derive(Clone, Debug)]
pub struct FleetSample {
    pub fleet: FleetModel,
    pub x0: Vector,
    pub targets: Vector,
    pub classes: Vec<AgentClass>,
    pub leak: Vec<f64>,
    pub q: Matrix,
    pub q_terminal: Matrix,
    pub r: Matrix,
}

impl FleetSample {
    /// Cost with the reference held at each agent's class target.
    pub fn cost_spec(&self, horizon: usize) -> CostSpec {
        CostSpec::constant_reference(
            self.q.clone(),
            self.r.clone(),
            self.q_terminal.clone(),
            &self.targets,
            horizon,
        )
    }
}

impl FleetParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a_min.is_finite()
            && self.a_max.is_finite()
            && self.a_min <= self.a_max
            && self.b.is_finite()
            && self.noise_variance >= 0.0
            && self.capacity_kwh > 0.0
            && self.initial_soc.0 <= self.initial_soc.1
            && self.q >= 0.0
            && self.q_terminal >= 0.0
            && self.r > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid fleet parameters: {self:?}")))
        }
    }

    /// Draws `n_agents` scalar batteries. The first ⌈N/2⌉ agents form class α.
    pub fn sample(&self, n_agents: usize, seed: u64) -> Result<FleetSample> {
        if n_agents == 0 {
            return Err(Error::EmptyInput("fleet needs at least one agent"));
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_alpha = n_agents.div_ceil(2);
        let mut agents = Vec::with_capacity(n_agents);
        let mut leak = Vec::with_capacity(n_agents);
        let mut x0 = Vector::zeros(n_agents);
        let mut targets = Vector::zeros(n_agents);
        let mut classes = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let a = if self.a_max > self.a_min {
                rng.random_range(self.a_min..=self.a_max)
            } else {
                self.a_min
            };
            let soc = if self.initial_soc.1 > self.initial_soc.0 {
                rng.random_range(self.initial_soc.0..=self.initial_soc.1)
            } else {
                self.initial_soc.0
            };
            let class = if i < n_alpha {
                AgentClass::Alpha
            } else {
                AgentClass::Beta
            };
            let target = match class {
                AgentClass::Alpha => self.class_targets.0,
                AgentClass::Beta => self.class_targets.1,
            };
            agents.push(AgentModel::scalar(a, self.b, self.noise_variance));
            leak.push(a);
            x0[i] = soc * self.capacity_kwh;
            targets[i] = target * self.capacity_kwh;
            classes.push(class);
        }
        Ok(FleetSample {
            fleet: FleetModel::from_agents(&agents)?,
            x0,
            targets,
            classes,
            leak,
            q: Matrix::identity(n_agents, n_agents) * self.q,
            q_terminal: Matrix::identity(n_agents, n_agents) * self.q_terminal,
            r: Matrix::identity(n_agents, n_agents) * self.r,
        })
    }
}

/// Samples a fleet with the default demand-response parameters.
pub fn sample_fleet(n_agents: usize, seed: u64) -> Result<FleetSample> {
    FleetParams::default().sample(n_agents, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifty_agents_split_into_two_classes() {
        let s = sample_fleet(50, 3).unwrap();
        assert_eq!(s.fleet.n_tot(), 50);
        assert_eq!(s.fleet.m_tot(), 50);
        let hi = s.targets.iter().filter(|&&t| t == 64.0).count();
        let lo = s.targets.iter().filter(|&&t| t == 32.0).count();
        assert_eq!((hi, lo), (25, 25));
        assert_eq!(
            s.classes.iter().filter(|c| **c == AgentClass::Alpha).count(),
            25
        );
        for i in 0..50 {
            assert_eq!(s.fleet.w()[(i, i)], 3.0);
            assert_eq!(s.fleet.b()[(i, i)], 1.0);
        }
    }

    #[test]
    fn two_agents_reproducible_and_in_range() {
        let a = sample_fleet(2, 11).unwrap();
        let b = sample_fleet(2, 11).unwrap();
        assert_eq!(a.leak, b.leak);
        assert_eq!(a.x0, b.x0);
        for &l in &a.leak {
            assert!((0.96..=0.99).contains(&l));
        }
        let c = sample_fleet(2, 12).unwrap();
        assert_ne!(a.leak, c.leak);
    }

    #[test]
    fn single_agent_weights() {
        let s = sample_fleet(1, 0).unwrap();
        assert_eq!(s.fleet.n_agents(), 1);
        assert_eq!(s.r[(0, 0)], 0.01);
        assert_eq!(s.q[(0, 0)], 1.0);
        assert_eq!(s.q_terminal[(0, 0)], 1.0);
        assert_eq!(s.classes, vec![AgentClass::Alpha]);
    }

    #[test]
    fn zero_agents_rejected() {
        assert!(matches!(sample_fleet(0, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn initial_soc_in_range() {
        let s = sample_fleet(200, 99).unwrap();
        for &x in s.x0.iter() {
            assert!((32.0..=48.0).contains(&x), "{x}");
        }
    }
}
