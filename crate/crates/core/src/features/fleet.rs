use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sensor::{SensorTable, UnitRecord, NUM_SENSORS};
use crate::dist::{normal_draw, zero_truncated_poisson};
use crate::error::{HohsmmError, Result};
use crate::segmentation::LabeledSegmentation;

/// Flat sensors, 1-based, as in the public turbofan corpus.
pub const FLAT_SENSORS: [usize; 7] = [1, 5, 6, 10, 16, 18, 19];

/// Run-to-failure fleet driven by a second-order health chain. Degradation
/// moves one level at a time and the chance of rising depends on whether the
/// last move was a rise or a fall, so the next level depends on the last two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub num_train: usize,
    pub num_test: usize,
    /// Mean dwell per level; the last level is the failure level.
    pub xi: Vec<f64>,
    pub up_after_rise: f64,
    pub up_after_fall: f64,
    /// Per-sensor noise level.
    pub noise: f64,
    /// Range of test truncation points as a fraction of life.
    pub cut_range: (f64, f64),
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            num_train: 6,
            num_test: 4,
            xi: vec![8.0, 7.0, 7.0, 6.0, 6.0, 5.0, 4.0],
            up_after_rise: 0.35,
            up_after_fall: 1.0,
            noise: 1.0,
            cut_range: (0.4, 0.9),
        }
    }
}

impl FleetConfig {
    pub fn num_levels(&self) -> usize {
        self.xi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_levels() < 3 {
            return Err(HohsmmError::InvalidConfig("a fleet needs at least 3 health levels".into()));
        }
        if self.num_train == 0 {
            return Err(HohsmmError::InvalidConfig("need at least one training unit".into()));
        }
        let probs_ok = [self.up_after_rise, self.up_after_fall]
            .iter()
            .all(|p| (0.0..=1.0).contains(p));
        let (lo, hi) = self.cut_range;
        if !probs_ok || !(0.0 < lo && lo <= hi && hi < 1.0) || !(self.noise > 0.0) {
            return Err(HohsmmError::InvalidConfig("fleet probabilities, noise or cut range out of range".into()));
        }
        if self.xi.iter().any(|x| !(*x > 0.0)) {
            return Err(HohsmmError::InvalidConfig("dwell means must be positive".into()));
        }
        Ok(())
    }
}

/// Generated fleet plus the hidden level path of every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub train: SensorTable,
    pub test: SensorTable,
    /// Remaining cycles after the last test row, in test-unit order.
    pub test_rul: Vec<f64>,
    pub train_truth: Vec<LabeledSegmentation>,
    pub test_truth: Vec<LabeledSegmentation>,
}

/// Level path from 0 until the failure level is first entered.
pub fn level_path<R: Rng + ?Sized>(config: &FleetConfig, rng: &mut R) -> Vec<usize> {
    let top = config.num_levels() - 1;
    let mut path = vec![0, 1];
    while *path.last().unwrap() != top {
        let b = path[path.len() - 1];
        let a = path[path.len() - 2];
        let p_up = if b > a { config.up_after_rise } else { config.up_after_fall };
        let next = if b == 0 || rng.random::<f64>() < p_up { b + 1 } else { b - 1 };
        path.push(next);
    }
    path
}

struct SensorModel {
    base: Vec<f64>,
    gain: Vec<f64>,
}

fn sensor_model<R: Rng + ?Sized>(rng: &mut R) -> SensorModel {
    let mut base = Vec::with_capacity(NUM_SENSORS);
    let mut gain = Vec::with_capacity(NUM_SENSORS);
    for s in 1..=NUM_SENSORS {
        base.push((100.0 * rng.random_range(1.0..20.0_f64)).round());
        if FLAT_SENSORS.contains(&s) {
            gain.push(0.0);
        } else {
            let g = rng.random_range(1.2..1.8);
            gain.push(if rng.random::<f64>() < 0.3 { -g } else { g });
        }
    }
    SensorModel { base, gain }
}

fn simulate_unit<R: Rng + ?Sized>(
    config: &FleetConfig,
    sensors: &SensorModel,
    unit: u32,
    rng: &mut R,
) -> (UnitRecord, LabeledSegmentation) {
    let states = level_path(config, rng);
    let durations: Vec<usize> = states
        .iter()
        .map(|&s| zero_truncated_poisson(rng, config.xi[s]) as usize)
        .collect();
    let mut boundaries = Vec::with_capacity(states.len());
    let mut rows = Vec::new();
    for (&s, &d) in states.iter().zip(&durations) {
        boundaries.push(rows.len());
        for _ in 0..d {
            let mut row = vec![
                normal_draw(rng, 0.0, 0.002),
                normal_draw(rng, 0.0, 0.0003),
                100.0,
            ];
            for k in 0..NUM_SENSORS {
                let v = if sensors.gain[k] == 0.0 {
                    sensors.base[k]
                } else {
                    normal_draw(rng, sensors.base[k] + sensors.gain[k] * config.noise * s as f64, config.noise)
                };
                row.push(v);
            }
            rows.push(row);
        }
    }
    let record = UnitRecord {
        unit,
        cycles: (1..=rows.len() as u32).collect(),
        rows,
    };
    (
        record,
        LabeledSegmentation {
            boundaries,
            durations,
            states,
        },
    )
}

fn cut_segmentation(seg: &LabeledSegmentation, len: usize) -> LabeledSegmentation {
    let mut out = LabeledSegmentation {
        boundaries: Vec::new(),
        durations: Vec::new(),
        states: Vec::new(),
    };
    for ((&b, &d), &s) in seg.boundaries.iter().zip(&seg.durations).zip(&seg.states) {
        if b >= len {
            break;
        }
        out.boundaries.push(b);
        out.durations.push(d.min(len - b));
        out.states.push(s);
    }
    out
}

/// Values are rounded to four decimals so the written text is exact.
fn round4(table: &mut SensorTable) {
    for u in &mut table.units {
        for row in &mut u.rows {
            for v in row.iter_mut() {
                *v = (*v * 1e4).round() / 1e4;
            }
        }
    }
}

/// Simulate `num_train` full lives and `num_test` lives cut at a random
/// fraction of their length.
pub fn generate_fleet<R: Rng + ?Sized>(config: &FleetConfig, rng: &mut R) -> Result<Fleet> {
    config.validate()?;
    let sensors = sensor_model(rng);
    let mut train = SensorTable { units: Vec::new() };
    let mut train_truth = Vec::new();
    for u in 0..config.num_train {
        let (rec, seg) = simulate_unit(config, &sensors, u as u32 + 1, rng);
        train.units.push(rec);
        train_truth.push(seg);
    }
    let mut test = SensorTable { units: Vec::new() };
    let mut test_truth = Vec::new();
    let mut test_rul = Vec::new();
    for u in 0..config.num_test {
        let (rec, seg) = simulate_unit(config, &sensors, u as u32 + 1, rng);
        let frac = rng.random_range(config.cut_range.0..=config.cut_range.1);
        let keep = ((rec.len() as f64 * frac).round() as usize).clamp(1, rec.len());
        test_rul.push((rec.len() - keep) as f64);
        test_truth.push(cut_segmentation(&seg, keep));
        test.units.push(rec.prefix(keep));
    }
    round4(&mut train);
    round4(&mut test);
    Ok(Fleet {
        train,
        test,
        test_rul,
        train_truth,
        test_truth,
    })
}

impl Fleet {
    pub fn rul_text(&self) -> String {
        self.test_rul.iter().map(|r| format!("{r}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paths_move_by_one_and_end_at_failure() {
        let config = FleetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = level_path(&config, &mut rng);
            assert_eq!(&p[..2], &[0, 1]);
            assert_eq!(*p.last().unwrap(), 6);
            assert!(p[..p.len() - 1].iter().all(|&s| s < 6));
            assert!(p.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
        }
    }

    #[test]
    fn fleet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fleet = generate_fleet(&FleetConfig::default(), &mut rng).unwrap();
        assert_eq!(fleet.train.units.len(), 6);
        assert_eq!(fleet.test.units.len(), 4);
        for (u, seg) in fleet.train.units.iter().zip(&fleet.train_truth) {
            seg.validate(u.len()).unwrap();
            for s in FLAT_SENSORS {
                assert!(u.rows.iter().all(|r| r[2 + s] == u.rows[0][2 + s]));
            }
        }
        for (u, seg) in fleet.test.units.iter().zip(&fleet.test_truth) {
            seg.validate(u.len()).unwrap();
        }
        let again = SensorTable::parse(&fleet.train.to_text(), std::path::Path::new("x")).unwrap();
        assert_eq!(again, fleet.train);
    }
}
