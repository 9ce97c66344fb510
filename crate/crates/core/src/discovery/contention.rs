//! Three-phase receiver contention: prioritization by class, elimination
//! by longest burst, then yield by shortest back-off.

use rand::Rng;

use super::NodeClass;
use crate::model::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionConfig {
    pub priority_slots: u32,
    pub elimination_slots: u32,
    pub yield_slots: u32,
    pub slot: SimTime,
}

impl Default for ContentionConfig {
    fn default() -> Self {
        ContentionConfig {
            priority_slots: 4,
            elimination_slots: 12,
            yield_slots: 14,
            slot: SimTime::from_micros(10),
        }
    }
}

impl ContentionConfig {
    pub fn prioritization_time(&self) -> SimTime {
        SimTime(self.slot.0 * self.priority_slots as u64)
    }

    /// Burst slots plus the survival verification slot.
    pub fn elimination_time(&self) -> SimTime {
        SimTime(self.slot.0 * (self.elimination_slots as u64 + 1))
    }

    pub fn yield_time(&self) -> SimTime {
        SimTime(self.slot.0 * self.yield_slots as u64)
    }

    fn priority_slot(&self, class: NodeClass) -> u32 {
        (class.get() as u32).min(self.priority_slots.saturating_sub(1))
    }
}

/// One receiver taking part in a contention round. `aggressive` receivers
/// always pick the longest burst and the shortest yield.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contender<K> {
    pub id: K,
    pub class: NodeClass,
    pub aggressive: bool,
}

/// Everyone whose burst slot comes first survives; the rest hear that
/// burst and drop out. Non-contending classes are ignored.
pub fn contention_prioritization<K: Copy>(
    participants: &[Contender<K>],
    cfg: &ContentionConfig,
) -> Vec<Contender<K>> {
    let eligible = participants.iter().filter(|c| c.class.contends());
    let Some(first) = eligible.clone().map(|c| cfg.priority_slot(c.class)).min() else {
        return Vec::new();
    };
    eligible
        .filter(|c| cfg.priority_slot(c.class) == first)
        .copied()
        .collect()
}

/// Survivors are those whose burst length equals the longest drawn.
pub fn eliminate_by_draws<K: Copy>(draws: &[(K, u32)]) -> Vec<K> {
    let Some(longest) = draws.iter().map(|(_, d)| *d).max() else {
        return Vec::new();
    };
    draws
        .iter()
        .filter(|(_, d)| *d == longest)
        .map(|(k, _)| *k)
        .collect()
}

pub fn contention_elimination<K: Copy, R: Rng + ?Sized>(
    survivors: &[Contender<K>],
    cfg: &ContentionConfig,
    rng: &mut R,
) -> (Vec<(K, u32)>, Vec<Contender<K>>) {
    let draws: Vec<(K, u32)> = survivors
        .iter()
        .map(|c| {
            let burst = if c.aggressive {
                cfg.elimination_slots
            } else {
                rng.gen_range(1..=cfg.elimination_slots)
            };
            (c.id, burst)
        })
        .collect();
    let longest = draws.iter().map(|(_, d)| *d).max().unwrap_or(0);
    let out = survivors
        .iter()
        .zip(&draws)
        .filter(|(_, (_, d))| *d == longest)
        .map(|(c, _)| *c)
        .collect();
    (draws, out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum YieldOutcome<K> {
    Winner { id: K, delay: u32 },
    Collision { ids: Vec<K>, delay: u32 },
    Empty,
}

/// The unique shortest yield wins; a shared minimum collides.
pub fn yield_by_draws<K: Copy>(draws: &[(K, u32)]) -> YieldOutcome<K> {
    let Some(shortest) = draws.iter().map(|(_, d)| *d).min() else {
        return YieldOutcome::Empty;
    };
    let at_min: Vec<K> = draws
        .iter()
        .filter(|(_, d)| *d == shortest)
        .map(|(k, _)| *k)
        .collect();
    if at_min.len() == 1 {
        YieldOutcome::Winner {
            id: at_min[0],
            delay: shortest,
        }
    } else {
        YieldOutcome::Collision {
            ids: at_min,
            delay: shortest,
        }
    }
}

pub fn contention_yield<K: Copy, R: Rng + ?Sized>(
    survivors: &[Contender<K>],
    cfg: &ContentionConfig,
    rng: &mut R,
) -> (Vec<(K, u32)>, YieldOutcome<K>) {
    let draws: Vec<(K, u32)> = survivors
        .iter()
        .map(|c| {
            let delay = if c.aggressive {
                0
            } else {
                rng.gen_range(0..cfg.yield_slots)
            };
            (c.id, delay)
        })
        .collect();
    let outcome = yield_by_draws(&draws);
    (draws, outcome)
}

/// Full record of one contention round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentionOutcome<K> {
    pub prioritized: Vec<Contender<K>>,
    pub elimination_draws: Vec<(K, u32)>,
    pub eliminated_survivors: Vec<Contender<K>>,
    pub yield_draws: Vec<(K, u32)>,
    pub result: YieldOutcome<K>,
}

pub fn run_contention<K: Copy, R: Rng + ?Sized>(
    participants: &[Contender<K>],
    cfg: &ContentionConfig,
    rng: &mut R,
) -> ContentionOutcome<K> {
    let prioritized = contention_prioritization(participants, cfg);
    if prioritized.is_empty() {
        return ContentionOutcome {
            prioritized,
            elimination_draws: Vec::new(),
            eliminated_survivors: Vec::new(),
            yield_draws: Vec::new(),
            result: YieldOutcome::Empty,
        };
    }
    let (elimination_draws, eliminated_survivors) = contention_elimination(&prioritized, cfg, rng);
    let (yield_draws, result) = contention_yield(&eliminated_survivors, cfg, rng);
    ContentionOutcome {
        prioritized,
        elimination_draws,
        eliminated_survivors,
        yield_draws,
        result,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::seeded_rng;

    fn c(id: char, class: u8) -> Contender<char> {
        Contender {
            id,
            class: NodeClass::new(class).unwrap(),
            aggressive: false,
        }
    }

    fn ids(v: &[Contender<char>]) -> Vec<char> {
        v.iter().map(|c| c.id).collect()
    }

    #[test]
    fn prioritization_keeps_lowest_class() {
        let cfg = ContentionConfig::default();
        assert_eq!(
            ids(&contention_prioritization(
                &[c('A', 1), c('B', 2), c('C', 3)],
                &cfg
            )),
            ['A']
        );
        assert_eq!(
            ids(&contention_prioritization(
                &[c('B', 2), c('b', 2), c('C', 3)],
                &cfg
            )),
            ['B', 'b']
        );
        assert!(contention_prioritization::<char>(&[], &cfg).is_empty());
        assert!(contention_prioritization(&[c('E', 4)], &cfg).is_empty());
    }

    #[test]
    fn elimination_max_rule() {
        assert_eq!(eliminate_by_draws(&[('A', 7), ('B', 4)]), ['A']);
        assert_eq!(eliminate_by_draws(&[('A', 7), ('B', 7)]), ['A', 'B']);
        assert_eq!(eliminate_by_draws(&[('A', 1)]), ['A']);
    }

    #[test]
    fn yield_min_rule() {
        assert_eq!(
            yield_by_draws(&[('A', 2), ('B', 5)]),
            YieldOutcome::Winner { id: 'A', delay: 2 }
        );
        assert_eq!(
            yield_by_draws(&[('A', 3), ('B', 3)]),
            YieldOutcome::Collision {
                ids: vec!['A', 'B'],
                delay: 3
            }
        );
        assert_eq!(
            yield_by_draws(&[('A', 9)]),
            YieldOutcome::Winner { id: 'A', delay: 9 }
        );
        assert_eq!(yield_by_draws::<char>(&[]), YieldOutcome::Empty);
    }

    #[test]
    fn elimination_survivors_match_draws() {
        let cfg = ContentionConfig::default();
        let mut rng = seeded_rng(2);
        for _ in 0..1000 {
            let group = [c('A', 1), c('B', 1), c('C', 1), c('D', 1)];
            let (draws, kept) = contention_elimination(&group, &cfg, &mut rng);
            assert_eq!(ids(&kept), eliminate_by_draws(&draws));
            assert!(draws.iter().all(|(_, d)| (1..=12).contains(d)));
        }
    }

    #[test]
    fn class_one_beats_class_three_always() {
        let cfg = ContentionConfig::default();
        let mut rng = seeded_rng(8);
        for _ in 0..1000 {
            let out = run_contention(&[c('A', 1), c('C', 3), c('D', 3)], &cfg, &mut rng);
            assert_eq!(
                out.result,
                YieldOutcome::Winner {
                    id: 'A',
                    delay: out.yield_draws[0].1
                }
            );
        }
    }

    #[test]
    fn aggressive_contender_draws_extremes() {
        let cfg = ContentionConfig::default();
        let mut rng = seeded_rng(1);
        let mut bad = c('S', 1);
        bad.aggressive = true;
        for _ in 0..200 {
            let out = run_contention(&[bad, c('A', 1)], &cfg, &mut rng);
            assert!(out.eliminated_survivors.iter().any(|x| x.id == 'S'));
            assert_eq!(
                out.yield_draws.iter().find(|(k, _)| *k == 'S').unwrap().1,
                0
            );
        }
    }

    #[test]
    fn phase_durations() {
        let cfg = ContentionConfig::default();
        assert_eq!(cfg.prioritization_time(), SimTime(40));
        assert_eq!(cfg.elimination_time(), SimTime(130));
        assert_eq!(cfg.yield_time(), SimTime(140));
    }
}
