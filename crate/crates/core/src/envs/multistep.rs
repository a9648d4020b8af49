//! Generic stepping interface for multi-step tasks, plus a toy counter
//! environment exercising the full contract: observations, error notices,
//! terminal exits, and rewards.

use serde::{Deserialize, Serialize};

use super::{EnvError, Observation};
use crate::program::{ActionProgram, Literal};
use crate::spec::TestCase;

/// A stepping tool environment. Each episode owns its instance exclusively.
pub trait Environment: Send {
    /// Reset to the given test case and return the initial observation.
    fn reset(&mut self, test: &TestCase) -> Observation;
    /// Apply one program segment. Invalid calls yield a non-terminal
    /// error-notice observation (the model may recover) unless the
    /// environment declares them fatal.
    fn step(&mut self, segment: &ActionProgram) -> Result<Observation, EnvError>;
    fn is_terminal(&self) -> bool;
}

/// Apply a segment, guarding against stepping a finished episode.
pub fn env_step(
    env: &mut dyn Environment,
    segment: &ActionProgram,
) -> Result<Observation, EnvError> {
    if env.is_terminal() {
        return Err(EnvError::SteppedAfterTerminal);
    }
    env.step(segment)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterConfig {
    /// Count the episode must reach before `finish` for a positive reward.
    #[serde(default = "default_target")]
    pub target: i64,
}

fn default_target() -> i64 {
    1
}

impl Default for CounterConfig {
    fn default() -> Self {
        CounterConfig {
            target: default_target(),
        }
    }
}

/// Toy counter: `inc()` adds one, `add(n)` adds `n`, `finish()` ends the
/// episode with reward 1 when the target count was reached.
pub struct CounterEnv {
    config: CounterConfig,
    count: i64,
    terminal: bool,
}

impl CounterEnv {
    pub fn new(config: CounterConfig) -> Self {
        CounterEnv {
            config,
            count: 0,
            terminal: false,
        }
    }

    pub fn count(&self) -> i64 {
        self.count
    }
}

impl Environment for CounterEnv {
    fn reset(&mut self, _test: &TestCase) -> Observation {
        self.count = 0;
        self.terminal = false;
        Observation {
            text: "count=0".into(),
            terminal: false,
            reward: None,
        }
    }

    fn step(&mut self, segment: &ActionProgram) -> Result<Observation, EnvError> {
        if self.terminal {
            return Err(EnvError::SteppedAfterTerminal);
        }
        for call in &segment.calls {
            match call.name.as_str() {
                "inc" => self.count += 1,
                "add" => match call.args.first() {
                    Some(Literal::Int(n)) => self.count += n,
                    _ => {
                        return Ok(Observation {
                            text: format!("error: add expects an integer, count={}", self.count),
                            terminal: false,
                            reward: None,
                        })
                    }
                },
                "finish" => {
                    self.terminal = true;
                    let reward = if self.count == self.config.target {
                        1.0
                    } else {
                        0.0
                    };
                    return Ok(Observation {
                        text: format!("done count={}", self.count),
                        terminal: true,
                        reward: Some(reward),
                    });
                }
                other => {
                    return Ok(Observation {
                        text: format!("error: unknown function {other:?}, count={}", self.count),
                        terminal: false,
                        reward: None,
                    })
                }
            }
        }
        Ok(Observation {
            text: format!("count={}", self.count),
            terminal: false,
            reward: None,
        })
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }
}
