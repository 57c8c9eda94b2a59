//! Ancestral sampler for the generative model, keeping the true latents.
//!
//! Arrivals are homogeneous Poisson: users and items are born at fixed
//! rates, and every live user rates at its own rate, picking an item
//! uniformly among those already born. Between an entity's events its latent
//! vector takes a Brownian step scaled by the elapsed time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{Event, EventLog, ModelParams, Side, Time};
use crate::probit::RatingScale;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub params: ModelParams<f64>,
    pub scale: RatingScale<f64>,
    /// Users and items alive at t = 0 with standard-normal latents.
    pub initial_users: usize,
    pub initial_items: usize,
    /// Births per day after t = 0.
    pub user_birth_rate: f64,
    pub item_birth_rate: f64,
    /// Ratings per day per live user.
    pub rating_rate: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let rates = [self.user_birth_rate, self.item_birth_rate];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("birth rates must be finite and non-negative"));
        }
        if !(self.rating_rate > 0.0) || !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("rating rate and horizon must be positive"));
        }
        if self.initial_users == 0 && self.user_birth_rate == 0.0 {
            return Err(Error::invalid("no users would ever exist"));
        }
        if self.initial_items == 0 && self.item_birth_rate == 0.0 {
            return Err(Error::invalid("no items would ever exist"));
        }
        Ok(())
    }
}

/// True latent vector of one entity at one of its event times.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthPoint {
    pub side: Side,
    pub id: u32,
    pub time: Time,
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub log: EventLog,
    pub truth: Vec<TruthPoint>,
}

struct Population {
    latents: Vec<Vec<f64>>,
    last_time: Vec<f64>,
    sum: Vec<f64>,
}

impl Population {
    fn new(dim: usize) -> Self {
        Population { latents: Vec::new(), last_time: Vec::new(), sum: vec![0.0; dim] }
    }

    fn birth(&mut self, rng: &mut ChaCha8Rng, t: f64, sigma2_birth: f64) -> u32 {
        let n = self.latents.len();
        let (center, sd) = if n == 0 || t == 0.0 {
            (vec![0.0; self.sum.len()], 1.0)
        } else {
            (self.sum.iter().map(|s| s / n as f64).collect(), sigma2_birth.sqrt())
        };
        let latent: Vec<f64> = center.iter().map(|c| c + sd * normal(rng)).collect();
        for (s, x) in self.sum.iter_mut().zip(&latent) {
            *s += x;
        }
        self.latents.push(latent);
        self.last_time.push(t);
        n as u32
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng, id: usize, t: f64, sigma2: f64) {
        let sd = (sigma2 * (t - self.last_time[id])).sqrt();
        if sd > 0.0 {
            for (x, s) in self.latents[id].iter_mut().zip(self.sum.iter_mut()) {
                let step = sd * normal(rng);
                *x += step;
                *s += step;
            }
        }
        self.last_time[id] = t;
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws a level from the ordered-probit likelihood at Gaussian mean `mu`.
pub fn sample_level<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma_e: f64, scale: &RatingScale<f64>) -> u16 {
    let z: f64 = StandardNormal.sample(rng);
    scale.discretize(mu + sigma_e * z)
}

/// Samples an event log and the true latent trajectories. Deterministic in `seed`.
pub fn generate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let p = &cfg.params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut users = Population::new(p.dim);
    let mut items = Population::new(p.dim);
    let mut events = Vec::new();
    let mut truth = Vec::new();
    let sigma_e = p.sigma2_e.sqrt();

    let point = |side: Side, id: u32, t: f64, latent: &[f64]| TruthPoint {
        side,
        id,
        time: Time::new(t).expect("simulated times are non-negative"),
        latent: latent.to_vec(),
    };

    for _ in 0..cfg.initial_users {
        let id = users.birth(&mut rng, 0.0, p.sigma2_u0);
        events.push(Event::user_birth(0.0, id));
        truth.push(point(Side::User, id, 0.0, &users.latents[id as usize]));
    }
    for _ in 0..cfg.initial_items {
        let id = items.birth(&mut rng, 0.0, p.sigma2_v0);
        events.push(Event::item_birth(0.0, id));
        truth.push(point(Side::Item, id, 0.0, &items.latents[id as usize]));
    }

    let mut t = 0.0;
    loop {
        let rating_total = cfg.rating_rate * users.latents.len() as f64;
        let total = cfg.user_birth_rate + cfg.item_birth_rate + rating_total;
        let wait: f64 = Exp::new(total).expect("positive total rate").sample(&mut rng);
        t += wait;
        if t > cfg.horizon {
            break;
        }
        let pick = rng.random::<f64>() * total;
        if pick < cfg.user_birth_rate {
            let id = users.birth(&mut rng, t, p.sigma2_u0);
            events.push(Event::user_birth(t, id));
            truth.push(point(Side::User, id, t, &users.latents[id as usize]));
        } else if pick < cfg.user_birth_rate + cfg.item_birth_rate {
            let id = items.birth(&mut rng, t, p.sigma2_v0);
            events.push(Event::item_birth(t, id));
            truth.push(point(Side::Item, id, t, &items.latents[id as usize]));
        } else {
            if items.latents.is_empty() || users.latents.is_empty() {
                continue;
            }
            let u = rng.random_range(0..users.latents.len());
            let i = rng.random_range(0..items.latents.len());
            users.advance(&mut rng, u, t, p.sigma2_u);
            items.advance(&mut rng, i, t, p.sigma2_v);
            let mu = dot(&users.latents[u], &items.latents[i]);
            let level = sample_level(&mut rng, mu, sigma_e, &cfg.scale);
            events.push(Event::rating(t, u as u32, i as u32, level));
            truth.push(point(Side::User, u as u32, t, &users.latents[u]));
            truth.push(point(Side::Item, i as u32, t, &items.latents[i]));
        }
    }

    Ok(SimOutput { log: EventLog::from_events(events), truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probit::default_thresholds;

    fn cfg(seed: u64) -> SimConfig {
        SimConfig {
            params: ModelParams::new(0.5, 0.01, 0.005, 2).unwrap(),
            scale: default_thresholds(5, -1.5, 1.0).unwrap(),
            initial_users: 5,
            initial_items: 5,
            user_birth_rate: 0.1,
            item_birth_rate: 0.1,
            rating_rate: 0.5,
            horizon: 60.0,
            seed,
        }
    }

    #[test]
    fn same_seed_same_log() {
        let a = generate(&cfg(7)).unwrap();
        let b = generate(&cfg(7)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.truth, b.truth);
        assert_ne!(generate(&cfg(8)).unwrap().log, a.log);
    }

    #[test]
    fn generated_logs_validate() {
        let out = generate(&cfg(1)).unwrap();
        assert!(out.log.n_ratings() > 50);
        assert!(out.log.validate(Some(5)).is_valid());
    }

    #[test]
    fn zero_diffusion_freezes_latents() {
        let mut c = cfg(3);
        c.params.sigma2_u = f64::MIN_POSITIVE;
        c.params.sigma2_v = f64::MIN_POSITIVE;
        let out = generate(&c).unwrap();
        for side in [Side::User, Side::Item] {
            let mut first: std::collections::HashMap<u32, &Vec<f64>> = Default::default();
            for p in out.truth.iter().filter(|p| p.side == side) {
                let f = first.entry(p.id).or_insert(&p.latent);
                for (a, b) in f.iter().zip(&p.latent) {
                    assert!((a - b).abs() < 1e-100);
                }
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg(0);
        c.rating_rate = 0.0;
        assert!(generate(&c).is_err());
        let mut c = cfg(0);
        c.initial_items = 0;
        c.item_birth_rate = 0.0;
        assert!(generate(&c).is_err());
    }
}
