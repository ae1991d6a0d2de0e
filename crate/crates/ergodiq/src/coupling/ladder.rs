//! Window-indexed coupling bookkeeping: the anchor process `l0`, the
//! alternating return/failure ladder `(delta_k, sigma_k)`, the settling
//! level `k0`, and the derived summary times.
//!
//! Conventions, in the global window clock with boundaries `0..=n`:
//!
//! * `P(l, k)` holds when the glued regime survived every window in
//!   `[l, k)` **and** the pair energy at boundary `l` was inside the ball
//!   `H(u1) + H(u2) <= 2 C1`.
//! * `l0(k) = min { l <= k : P(l, k) }`, with `None` standing for the
//!   empty minimum (infinity).
//! * `delta` is the first boundary inside the ball; `sigma` is the first
//!   boundary where `l0 > 0`, i.e. where the anchor at the origin is lost.
//!   Iterated: `delta_0 = delta`, `sigma_{k+1} = sigma o theta_{delta_k} +
//!   delta_k`, `delta_{k+1} = delta o theta_{sigma_{k+1}} + sigma_{k+1}`,
//!   each `= infinity` once its predecessor is. `k0` is the first level
//!   whose glued run is never broken again, and `l0(infinity) = delta_{k0}`.
//! * `rho = sigma + delta o theta_sigma` (both from the origin).
//!
//! On a finite horizon "never again" means "not before the horizon"; the
//! ladder reports that censoring honestly instead of extrapolating.

use crate::error::{Error, Result};

/// Everything retained per completed window.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowRecord {
    pub index: usize,
    /// Pair energy inside the `2 C1` ball at the window start.
    pub ball_at_start: bool,
    /// Windows since the current anchor at the window start (0 when
    /// unanchored: a fresh attempt gets the full budget).
    pub age: usize,
    /// Novikov budget the window ran under.
    pub theta: f64,
    /// Glued the whole window: every increment met and no trip.
    pub coupled: bool,
    pub all_met: bool,
    pub tripped: bool,
    pub h_integral: f64,
    pub log_density: f64,
}

/// Ladder times extracted from a completed flag record.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LadderTimes {
    /// Finite `delta_j` in level order (ball-return boundaries).
    pub deltas: Vec<usize>,
    /// Finite `sigma_j`, `j >= 1`, in level order (anchor-loss boundaries).
    pub sigmas: Vec<usize>,
    /// First level whose glued run reaches the horizon unbroken.
    pub k0: Option<usize>,
    /// `delta_{k0}`: the terminal anchor `l0(horizon)` when `k0` settles.
    pub anchor: Option<usize>,
    /// The ladder asked for a ball return that never happened before the
    /// horizon (includes the never-in-ball case).
    pub dead: bool,
}

/// Per-path record of window outcomes and boundary ball flags.
#[derive(Debug, Clone)]
pub struct CouplingLedger {
    window_len: f64,
    /// Ball flag per recorded boundary `0..=n`.
    ball: Vec<bool>,
    /// Glued flag per completed window `0..n`.
    coupled: Vec<bool>,
    records: Vec<WindowRecord>,
    mid_window: bool,
    closed: bool,
}

impl CouplingLedger {
    pub fn new(window_len: f64) -> Result<Self> {
        if !(window_len > 0.0) || !window_len.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "window length must be positive and finite, got {window_len}"
            )));
        }
        Ok(Self {
            window_len,
            ball: Vec::new(),
            coupled: Vec::new(),
            records: Vec::new(),
            mid_window: false,
            closed: false,
        })
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    /// Completed windows so far.
    pub fn windows(&self) -> usize {
        self.coupled.len()
    }

    pub fn records(&self) -> &[WindowRecord] {
        &self.records
    }

    /// Record the ball flag at the next window's start boundary and return
    /// `(window index, age)`; the age feeds the Novikov budget schedule.
    pub fn start_window(&mut self, ball: bool) -> (usize, usize) {
        assert!(!self.mid_window, "start_window called twice in a row");
        assert!(!self.closed, "ledger already closed");
        self.ball.push(ball);
        self.mid_window = true;
        let k = self.coupled.len();
        (k, self.age(k))
    }

    /// Record the outcome of the window opened by the last `start_window`.
    pub fn finish_window(
        &mut self,
        coupled: bool,
        all_met: bool,
        tripped: bool,
        h_integral: f64,
        log_density: f64,
        theta: f64,
    ) {
        assert!(self.mid_window, "finish_window without start_window");
        let index = self.coupled.len();
        let ball_at_start = self.ball[index];
        let age = self.age(index);
        self.coupled.push(coupled);
        self.records.push(WindowRecord {
            index,
            ball_at_start,
            age,
            theta,
            coupled,
            all_met,
            tripped,
            h_integral,
            log_density,
        });
        self.mid_window = false;
    }

    /// Record the ball flag at the horizon boundary, making `l0(n)` and the
    /// ladder well defined on the whole run.
    pub fn close(&mut self, final_ball: bool) {
        assert!(!self.mid_window, "close called mid-window");
        assert!(!self.closed, "ledger already closed");
        self.ball.push(final_ball);
        self.closed = true;
    }

    /// Start of the glued run active at boundary `k`: one past the last
    /// failed window before `k`.
    fn run_start(&self, k: usize) -> usize {
        (0..k)
            .rev()
            .find(|&w| !self.coupled[w])
            .map(|w| w + 1)
            .unwrap_or(0)
    }

    /// The anchor `l0(k)`; `None` encodes the empty minimum (infinity).
    pub fn l0(&self, k: usize) -> Option<usize> {
        assert!(k < self.ball.len(), "boundary {k} not recorded yet");
        (self.run_start(k)..=k).find(|&l| self.ball[l])
    }

    /// Windows since the anchor, `k - l0(k)`; an unanchored boundary counts
    /// as age 0 so a fresh coupling attempt gets the full budget.
    pub fn age(&self, k: usize) -> usize {
        match self.l0(k) {
            Some(l) => k - l,
            None => 0,
        }
    }

    /// First window index from which the glued regime holds to the horizon,
    /// `None` when the final window failed (or nothing ran).
    pub fn coupling_time(&self) -> Option<usize> {
        let n = self.coupled.len();
        if n == 0 || !self.coupled[n - 1] {
            return None;
        }
        Some(self.run_start(n))
    }

    /// Iterate the return/failure ladder over the recorded horizon.
    pub fn ladder(&self) -> LadderTimes {
        let nb = self.ball.len();
        let nw = self.coupled.len();
        let mut deltas = Vec::new();
        let mut sigmas = Vec::new();
        let mut k0 = None;
        let mut anchor = None;
        let mut dead = false;
        let mut from = 0usize;
        loop {
            match (from..nb).find(|&k| self.ball[k]) {
                None => {
                    dead = true;
                    break;
                }
                Some(d) => {
                    deltas.push(d);
                    match (d..nw).find(|&w| !self.coupled[w]) {
                        None => {
                            k0 = Some(deltas.len() - 1);
                            anchor = Some(d);
                            break;
                        }
                        Some(w) => {
                            sigmas.push(w + 1);
                            from = w + 1;
                        }
                    }
                }
            }
        }
        LadderTimes {
            deltas,
            sigmas,
            k0,
            anchor,
            dead,
        }
    }

    /// `rho = sigma + delta o theta_sigma` from the origin: the next
    /// anchored ball boundary after the first anchor loss.
    pub fn rho(&self) -> Option<usize> {
        let nb = self.ball.len();
        let sigma = (0..nb).find(|&n| self.l0(n) != Some(0))?;
        (sigma..nb).find(|&k| self.ball[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Assemble a ledger from scripted flags: `ball` has one entry per
    /// boundary (`coupled.len() + 1`).
    fn scripted(ball: &[bool], coupled: &[bool]) -> CouplingLedger {
        assert_eq!(ball.len(), coupled.len() + 1);
        let mut ledger = CouplingLedger::new(1.0).unwrap();
        for (w, &c) in coupled.iter().enumerate() {
            ledger.start_window(ball[w]);
            ledger.finish_window(c, c, false, 0.0, 0.0, 1.0);
        }
        ledger.close(ball[coupled.len()]);
        ledger
    }

    /// Literal transcription of the definitions, used as the replay oracle:
    /// no incremental bookkeeping, just the set minima.
    fn l0_reference(ball: &[bool], coupled: &[bool], k: usize) -> Option<usize> {
        (0..=k).find(|&l| ball[l] && (l..k).all(|w| coupled[w]))
    }

    fn ladder_reference(ball: &[bool], coupled: &[bool]) -> LadderTimes {
        let nb = ball.len();
        let nw = coupled.len();
        let delta_from = |s: usize| (s..nb).find(|&k| ball[k]);
        // sigma o theta_s + s: first boundary n >= s where the shifted
        // anchor is lost, i.e. NOT (ball[s] and windows [s, n) all glued).
        let sigma_from = |s: usize| (s..nb).find(|&n| !(ball[s] && (s..n).all(|w| coupled[w])));
        let mut deltas = Vec::new();
        let mut sigmas = Vec::new();
        let mut k0 = None;
        let mut anchor = None;
        let mut dead = false;
        let mut cursor = 0usize;
        loop {
            match delta_from(cursor) {
                None => {
                    dead = true;
                    break;
                }
                Some(d) => {
                    deltas.push(d);
                    match sigma_from(d) {
                        None => {
                            k0 = Some(deltas.len() - 1);
                            anchor = Some(d);
                            break;
                        }
                        Some(s) => {
                            sigmas.push(s);
                            cursor = s;
                        }
                    }
                }
            }
        }
        let _ = nw;
        LadderTimes {
            deltas,
            sigmas,
            k0,
            anchor,
            dead,
        }
    }

    #[test]
    fn unbroken_run_from_anchored_start() {
        let ball = vec![true; 7];
        let coupled = vec![true; 6];
        let ledger = scripted(&ball, &coupled);
        for k in 0..=6 {
            assert_eq!(ledger.l0(k), Some(0));
            assert_eq!(ledger.age(k), k);
        }
        let times = ledger.ladder();
        assert_eq!(times.deltas, vec![0]);
        assert_eq!(times.sigmas, Vec::<usize>::new());
        assert_eq!(times.k0, Some(0));
        assert_eq!(times.anchor, Some(0));
        assert!(!times.dead);
        assert_eq!(ledger.coupling_time(), Some(0));
        assert_eq!(ledger.rho(), None);
    }

    #[test]
    fn failure_then_ball_reentry_moves_the_anchor() {
        // Glue breaks at window 3; the pair is outside the ball at boundary
        // 4 and re-enters at 5, holding from there: the anchor is 0 up to
        // boundary 3, lost at 4, and 5 from then on.
        let ball = vec![true, true, true, true, false, true, true, true, true];
        let coupled = vec![true, true, true, false, true, true, true, true];
        let ledger = scripted(&ball, &coupled);
        for k in 0..=3 {
            assert_eq!(ledger.l0(k), Some(0));
        }
        assert_eq!(ledger.l0(4), None);
        assert_eq!(ledger.age(4), 0, "unanchored boundary restarts the age");
        for k in 5..=8 {
            assert_eq!(ledger.l0(k), Some(5));
            assert_eq!(ledger.age(k), k - 5);
        }
        let times = ledger.ladder();
        assert_eq!(times.deltas, vec![0, 5]);
        assert_eq!(times.sigmas, vec![4]);
        assert_eq!(times.k0, Some(1));
        assert_eq!(times.anchor, Some(5));
        assert!(!times.dead);
        assert_eq!(ledger.coupling_time(), Some(4));
        // rho: anchor lost first at 4, next ball boundary is 5.
        assert_eq!(ledger.rho(), Some(5));
    }

    #[test]
    fn never_in_ball_is_the_infinite_sentinel() {
        let ball = vec![false; 5];
        let coupled = vec![true, false, true, true];
        let ledger = scripted(&ball, &coupled);
        for k in 0..=4 {
            assert_eq!(ledger.l0(k), None);
            assert_eq!(ledger.age(k), 0);
        }
        let times = ledger.ladder();
        assert!(times.deltas.is_empty());
        assert!(times.dead);
        assert_eq!(times.k0, None);
        assert_eq!(ledger.rho(), None);
    }

    #[test]
    fn ladder_death_after_a_failure_without_reentry() {
        let ball = vec![true, true, false, false, false];
        let coupled = vec![true, false, true, true];
        let ledger = scripted(&ball, &coupled);
        let times = ledger.ladder();
        assert_eq!(times.deltas, vec![0]);
        assert_eq!(times.sigmas, vec![2]);
        assert!(times.dead);
        assert_eq!(times.k0, None);
        assert_eq!(ledger.l0(4), None);
        assert_eq!(ledger.coupling_time(), Some(2));
    }

    #[test]
    fn exhaustive_window_flag_sequences_match_the_replay_oracle() {
        // All 64 binary glued-flag sequences of length 6 with every
        // boundary in the ball, cross-checked against the literal
        // definition replay.
        for mask in 0u32..64 {
            let coupled: Vec<bool> = (0..6).map(|w| mask >> w & 1 == 1).collect();
            let ball = vec![true; 7];
            let ledger = scripted(&ball, &coupled);
            for k in 0..=6 {
                assert_eq!(
                    ledger.l0(k),
                    l0_reference(&ball, &coupled, k),
                    "l0({k}) mismatch on mask {mask:06b}"
                );
            }
            assert_eq!(
                ledger.ladder(),
                ladder_reference(&ball, &coupled),
                "ladder mismatch on mask {mask:06b}"
            );
        }
    }

    #[test]
    fn random_flag_sequences_match_the_replay_oracle_and_invariants() {
        let mut rng = crate::rng::stream(41, 0, "ladder-random");
        for case in 0..400 {
            let nw = 1 + rng.random_range(0..12usize);
            let coupled: Vec<bool> = (0..nw).map(|_| rng.random::<f64>() < 0.7).collect();
            let ball: Vec<bool> = (0..=nw).map(|_| rng.random::<f64>() < 0.6).collect();
            let ledger = scripted(&ball, &coupled);
            for k in 0..=nw {
                assert_eq!(
                    ledger.l0(k),
                    l0_reference(&ball, &coupled, k),
                    "case {case} l0({k})"
                );
            }
            let times = ledger.ladder();
            assert_eq!(times, ladder_reference(&ball, &coupled), "case {case}");
            // l0 monotone structure: l0(k) = l implies l0(j) = l on [l, k].
            for k in 0..=nw {
                if let Some(l) = ledger.l0(k) {
                    for j in l..=k {
                        assert_eq!(ledger.l0(j), Some(l), "case {case} stability at {j}");
                    }
                }
            }
            // Interleaving: sigma_{j+1} > delta_j and delta_{j+1} >= sigma_{j+1}.
            for (j, &s) in times.sigmas.iter().enumerate() {
                assert!(s > times.deltas[j], "case {case} level {j}");
                if let Some(&d_next) = times.deltas.get(j + 1) {
                    assert!(d_next >= s, "case {case} level {j}");
                }
            }
            // A settled ladder's anchor is the terminal l0.
            if times.k0.is_some() {
                assert_eq!(times.anchor, ledger.l0(nw), "case {case} terminal anchor");
            }
        }
    }

    #[test]
    fn misuse_panics() {
        let result = std::panic::catch_unwind(|| {
            let mut ledger = CouplingLedger::new(1.0).unwrap();
            ledger.start_window(true);
            ledger.start_window(true);
        });
        assert!(result.is_err());
        assert!(CouplingLedger::new(0.0).is_err());
        assert!(CouplingLedger::new(f64::NAN).is_err());
    }
}
