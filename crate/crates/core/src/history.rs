//! Observed trajectory h_t = (s_0, a_0, r_0, s_1, ...) plus windowed views
//! used for truncated recurrent unrolls.

use alloc::vec::Vec;

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct HistStep {
    pub action: usize,
    pub reward: f64,
    pub state: Tensor,
}

/// Full observed history of the current episode.
#[derive(Debug, Clone)]
pub struct History {
    initial_state: Tensor,
    steps: Vec<HistStep>,
}

impl History {
    pub fn new(initial_state: Tensor) -> Self {
        Self {
            initial_state,
            steps: Vec::new(),
        }
    }

    /// Appends one transition: the action taken, the reward received, and the
    /// successor state.
    pub fn push(&mut self, action: usize, reward: f64, state: Tensor) {
        self.steps.push(HistStep {
            action,
            reward,
            state,
        });
    }

    /// Number of recorded transitions; the current timestep index equals this.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn view(&self) -> HistoryView<'_> {
        HistoryView {
            initial_state: &self.initial_state,
            steps: &self.steps,
        }
    }

    /// Suffix window of at most `max_len` transitions ending at the current
    /// timestep. The window start becomes a pseudo-initial state with
    /// zero-filled previous action/reward, matching truncated unrolls that
    /// restart from s_{t-t'} instead of s_0.
    pub fn suffix(&self, max_len: usize) -> HistoryView<'_> {
        let start = self.steps.len().saturating_sub(max_len);
        self.window_from(start)
    }

    /// Window starting at transition index `start` (0 = full history).
    pub fn window_from(&self, start: usize) -> HistoryView<'_> {
        if start == 0 {
            self.view()
        } else {
            HistoryView {
                initial_state: &self.steps[start - 1].state,
                steps: &self.steps[start..],
            }
        }
    }

    pub fn current_state(&self) -> &Tensor {
        self.steps
            .last()
            .map(|s| &s.state)
            .unwrap_or(&self.initial_state)
    }
}

/// Borrowed window over a [`History`].
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    initial_state: &'a Tensor,
    steps: &'a [HistStep],
}

impl<'a> HistoryView<'a> {
    pub fn from_parts(initial_state: &'a Tensor, steps: &'a [HistStep]) -> Self {
        Self {
            initial_state,
            steps,
        }
    }

    /// Number of transitions inside the window.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State at timestep `i` within the window, `i` in `0..=len`.
    pub fn state_at(&self, i: usize) -> &Tensor {
        if i == 0 {
            self.initial_state
        } else {
            &self.steps[i - 1].state
        }
    }

    pub fn step_at(&self, i: usize) -> &HistStep {
        &self.steps[i]
    }

    /// Observation tuple consumed at timestep `i`: previous reward and
    /// action (zero-filled at the window start) plus the current state.
    pub fn obs_parts_at(&self, i: usize) -> (f64, &Tensor, Option<usize>) {
        if i == 0 {
            (0.0, self.initial_state, None)
        } else {
            let prev = &self.steps[i - 1];
            (prev.reward, &prev.state, Some(prev.action))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn suffix_rebases_initial_state() {
        let mut h = History::new(s(0.0));
        h.push(1, -1.0, s(1.0));
        h.push(2, -1.0, s(2.0));
        h.push(0, 10.0, s(3.0));

        let w = h.suffix(2);
        assert_eq!(w.len(), 2);
        assert_eq!(w.state_at(0).data(), &[1.0]);
        let (r, st, a) = w.obs_parts_at(0);
        assert_eq!((r, a), (0.0, None));
        assert_eq!(st.data(), &[1.0]);
        let (r, _, a) = w.obs_parts_at(1);
        assert_eq!((r, a), (-1.0, Some(2)));
    }

    #[test]
    fn suffix_longer_than_history_is_full_view() {
        let mut h = History::new(s(0.0));
        h.push(0, 0.0, s(1.0));
        let w = h.suffix(100);
        assert_eq!(w.len(), 1);
        assert_eq!(w.state_at(0).data(), &[0.0]);
    }
}
