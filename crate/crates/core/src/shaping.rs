//! Narration scripts and the self-reward they generate.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use crate::dataset::detect_stack;
use crate::error::{Error, Result};
use crate::lang::{paraphrases, Command, Goal, Vocabulary};
use crate::mem::{euclidean, Mem, DEFAULT_THRESHOLD};
use crate::state_enc::StateStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardMode {
    Baseline,
    SubtaskOracle,
    MemShaped,
}

impl RewardMode {
    pub const ALL: [RewardMode; 3] = [
        RewardMode::Baseline,
        RewardMode::SubtaskOracle,
        RewardMode::MemShaped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Baseline => "baseline",
            RewardMode::SubtaskOracle => "subtask_oracle",
            RewardMode::MemShaped => "mem_shaped",
        }
    }
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown reward mode '{s}'")))
    }
}

/// Reward seen by the learner.
pub fn combined_reward(env_reward: f64, interim: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::Baseline => env_reward,
        RewardMode::SubtaskOracle | RewardMode::MemShaped => env_reward + interim,
    }
}

/// Ordered commands with a progress pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrationScript {
    commands: Vec<Command>,
    pointer: usize,
    loop_tail: usize,
    pub threshold: f64,
    pub r_shape: f64,
}

/// Goal of a known wording, if any.
fn goal_of(text: &str) -> Option<Goal> {
    let norm = crate::lang::split_words(text).join(" ");
    paraphrases()
        .into_iter()
        .find(|p| p.text == norm)
        .map(|p| p.goal)
}

impl NarrationScript {
    pub fn new(
        commands: Vec<Command>,
        loop_tail: usize,
        threshold: f64,
        r_shape: f64,
    ) -> Result<Self> {
        if commands.is_empty() {
            return Err(Error::config("narration script has no commands"));
        }
        if loop_tail >= commands.len() {
            return Err(Error::config(format!(
                "loop index {loop_tail} out of range for {} commands",
                commands.len()
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::config("script threshold must lie in (0, 1)"));
        }
        if !(r_shape > 0.0) {
            return Err(Error::config("shaping reward must be positive"));
        }
        Ok(NarrationScript {
            commands,
            pointer: 0,
            loop_tail,
            threshold,
            r_shape,
        })
    }

    /// The five canonical commands, then a loop over depot and marine.
    pub fn default_script(vocab: &Vocabulary) -> Result<Self> {
        let mut commands = Goal::ALL
            .iter()
            .map(|&g| Command::canonical(g, vocab))
            .collect::<Result<Vec<_>>>()?;
        commands.push(Command::canonical(Goal::Depot, vocab)?);
        commands.push(Command::canonical(Goal::Marine, vocab)?);
        Self::new(commands, 5, DEFAULT_THRESHOLD, 1.0)
    }

    /// One command per line; `#loop N` sets the restart index, other `#` lines and blanks are ignored.
    /// Without a directive the script loops over its last two commands.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut commands = Vec::new();
        let mut loop_tail = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("#loop") {
                let v = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("line {}: bad #loop directive", n + 1)))?;
                loop_tail = Some(v);
            } else if !line.is_empty() && !line.starts_with('#') {
                let cmd = Command::new(line, vocab, goal_of(line))
                    .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
                commands.push(cmd);
            }
        }
        let tail = loop_tail.unwrap_or(commands.len().saturating_sub(2));
        Self::new(commands, tail, DEFAULT_THRESHOLD, 1.0)
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn pointer(&self) -> usize {
        self.pointer
    }

    pub fn loop_tail(&self) -> usize {
        self.loop_tail
    }

    pub fn current(&self) -> &Command {
        &self.commands[self.pointer]
    }

    pub fn advance(&mut self) {
        self.pointer += 1;
        if self.pointer == self.commands.len() {
            self.pointer = self.loop_tail;
        }
    }

    pub fn reset(&mut self) {
        self.pointer = 0;
    }
}

/// Source of state-command distances.
pub trait Distance {
    fn distances(&mut self, pairs: &[(&StateStack, &Command)]) -> Result<Vec<f64>>;
}

/// Frozen MEM with cached command embeddings.
#[derive(Debug, Clone)]
pub struct MemDistance {
    mem: Arc<Mem>,
    commands: HashMap<Vec<usize>, Vec<f64>>,
}

impl MemDistance {
    pub fn new(mem: Arc<Mem>) -> Self {
        MemDistance {
            mem,
            commands: HashMap::new(),
        }
    }

    pub fn mem(&self) -> &Mem {
        &self.mem
    }
}

impl Distance for MemDistance {
    fn distances(&mut self, pairs: &[(&StateStack, &Command)]) -> Result<Vec<f64>> {
        for (_, c) in pairs {
            if !self.commands.contains_key(&c.tokens) {
                let e = self.mem.embed_commands(&[&c.tokens])?.remove(0);
                self.commands.insert(c.tokens.clone(), e);
            }
        }
        let stacks: Vec<&StateStack> = pairs.iter().map(|(s, _)| *s).collect();
        let states = self.mem.embed_states(&stacks)?;
        Ok(states
            .iter()
            .zip(pairs)
            .map(|(s, (_, c))| euclidean(s, &self.commands[&c.tokens]))
            .collect())
    }
}

/// A perfect grounding model: distance 0 exactly when the command's goal fires on the stack.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDistance;

impl Distance for OracleDistance {
    fn distances(&mut self, pairs: &[(&StateStack, &Command)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(s, c)| match (detect_stack(s), c.goal) {
                (Some(a), Some(b)) if a == b => 0.0,
                _ => 1.0,
            })
            .collect())
    }
}

/// Interim reward for a known distance; advances the script at most once.
pub fn shape_from_distance(distance: f64, script: &mut NarrationScript) -> (f64, bool) {
    if distance < script.threshold {
        script.advance();
        (script.r_shape, true)
    } else {
        (0.0, false)
    }
}

pub fn shape_reward(
    stack: &StateStack,
    script: &mut NarrationScript,
    distance: &mut dyn Distance,
) -> Result<(f64, bool)> {
    let d = distance.distances(&[(stack, script.current())])?[0];
    Ok(shape_from_distance(d, script))
}

/// Rule-driven counterpart of [`shape_reward`].
pub fn oracle_reward(stack: &StateStack, script: &mut NarrationScript) -> (f64, bool) {
    let fired =
        matches!((detect_stack(stack), script.current().goal), (Some(a), Some(b)) if a == b);
    shape_from_distance(if fired { 0.0 } else { 1.0 }, script)
}

/// Reward bookkeeping for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedStep {
    pub reward: f64,
    pub interim: f64,
    pub advanced: bool,
}

/// Shape a batch of transitions, one script per transition.
///
/// `distance` is consulted only in [`RewardMode::MemShaped`].
pub fn shape_batch(
    mode: RewardMode,
    stacks: &[&StateStack],
    env_rewards: &[f64],
    scripts: &mut [NarrationScript],
    distance: Option<&mut dyn Distance>,
) -> Result<Vec<ShapedStep>> {
    let interims: Vec<(f64, bool)> = match mode {
        RewardMode::Baseline => vec![(0.0, false); stacks.len()],
        RewardMode::SubtaskOracle => stacks
            .iter()
            .zip(scripts.iter_mut())
            .map(|(s, sc)| oracle_reward(s, sc))
            .collect(),
        RewardMode::MemShaped => {
            let distance =
                distance.ok_or_else(|| Error::config("mem_shaped mode needs a MEM checkpoint"))?;
            let pairs: Vec<(&StateStack, &Command)> = stacks
                .iter()
                .zip(scripts.iter())
                .map(|(s, sc)| (*s, sc.current()))
                .collect();
            let d = distance.distances(&pairs)?;
            d.iter()
                .zip(scripts.iter_mut())
                .map(|(&d, sc)| shape_from_distance(d, sc))
                .collect()
        }
    };
    Ok(interims
        .into_iter()
        .zip(env_rewards)
        .map(|((interim, advanced), &r)| ShapedStep {
            reward: combined_reward(r, interim, mode),
            interim,
            advanced,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::run_random_agent;
    use crate::env::EnvConfig;
    use crate::lang::corpus_vocabulary;

    struct Fixed(f64);

    impl Distance for Fixed {
        fn distances(&mut self, pairs: &[(&StateStack, &Command)]) -> Result<Vec<f64>> {
            Ok(vec![self.0; pairs.len()])
        }
    }

    fn stacks(episodes: u32) -> Vec<StateStack> {
        let cfg = EnvConfig {
            grid_size: 8,
            episode_length: 150,
            build_radius: 1,
            ..EnvConfig::default()
        };
        let mut out = Vec::new();
        run_random_agent(&cfg, episodes, 2, |t| out.push(t.stack)).unwrap();
        out
    }

    #[test]
    fn threshold_rule() {
        let v = corpus_vocabulary();
        let s = &stacks(1)[0];
        let mut script = NarrationScript::default_script(&v).unwrap();
        assert_eq!(
            shape_reward(s, &mut script, &mut Fixed(0.3)).unwrap(),
            (1.0, true)
        );
        assert_eq!(script.pointer(), 1);
        assert_eq!(
            shape_reward(s, &mut script, &mut Fixed(0.7)).unwrap(),
            (0.0, false)
        );
        assert_eq!(script.pointer(), 1);
    }

    #[test]
    fn wraps_to_loop_tail() {
        let v = corpus_vocabulary();
        let mut script = NarrationScript::default_script(&v).unwrap();
        for _ in 0..6 {
            script.advance();
        }
        assert_eq!(script.pointer(), 6);
        assert_eq!(script.current().goal, Some(Goal::Marine));
        script.advance();
        assert_eq!(script.pointer(), 5);
        assert_eq!(script.current().goal, Some(Goal::Depot));
    }

    #[test]
    fn combined_reward_modes() {
        assert_eq!(combined_reward(1.0, 1.0, RewardMode::MemShaped), 2.0);
        assert_eq!(combined_reward(0.0, 7.0, RewardMode::Baseline), 0.0);
        assert!("bogus".parse::<RewardMode>().is_err());
        assert_eq!(
            "subtask_oracle".parse::<RewardMode>().unwrap(),
            RewardMode::SubtaskOracle
        );
    }

    #[test]
    fn oracle_pays_for_current_goal() {
        let v = corpus_vocabulary();
        let all = stacks(20);
        let depot = all
            .iter()
            .find(|s| detect_stack(s) == Some(Goal::Depot))
            .unwrap();
        let mut script =
            NarrationScript::parse("build a supply depot\ntrain a marine\n", &v).unwrap();
        let out = shape_batch(
            RewardMode::SubtaskOracle,
            &[depot],
            &[0.5],
            std::slice::from_mut(&mut script),
            None,
        )
        .unwrap();
        assert_eq!(out[0].reward, 1.5);
        assert_eq!(script.pointer(), 1);
    }

    #[test]
    fn parse_script_directives() {
        let v = corpus_vocabulary();
        let s = NarrationScript::parse(
            "# plan\nBuild a worker\n\ncollect resources\n#loop 0\ntrain a marine\n",
            &v,
        )
        .unwrap();
        assert_eq!(s.commands().len(), 3);
        assert_eq!(s.loop_tail(), 0);
        assert_eq!(s.commands()[0].goal, Some(Goal::Worker));
        assert!(matches!(
            NarrationScript::parse("#loop 0\n", &v),
            Err(Error::Config(_))
        ));
        assert!(NarrationScript::parse("a\n#loop 5\n", &v).is_err());
        assert!(NarrationScript::parse("a\n#loop x\n", &v)
            .unwrap_err()
            .to_string()
            .contains("line 2"));
    }

    #[test]
    fn oracle_mem_matches_subtask_stream() {
        let v = corpus_vocabulary();
        let all = stacks(10);
        let base = NarrationScript::default_script(&v).unwrap();
        let (mut a, mut b) = (base.clone(), base);
        let mut oracle = OracleDistance;
        for s in &all {
            let x = shape_batch(
                RewardMode::SubtaskOracle,
                &[s],
                &[0.0],
                std::slice::from_mut(&mut a),
                None,
            )
            .unwrap();
            let y = shape_batch(
                RewardMode::MemShaped,
                &[s],
                &[0.0],
                std::slice::from_mut(&mut b),
                Some(&mut oracle),
            )
            .unwrap();
            assert_eq!(x, y);
        }
        assert!(a.pointer() > 0);
    }

    #[test]
    fn shaped_total_bounded_by_advances() {
        let v = corpus_vocabulary();
        let mut script = NarrationScript::default_script(&v).unwrap();
        let (mut total, mut advances) = (0.0, 0);
        for s in &stacks(5) {
            let out = shape_batch(
                RewardMode::SubtaskOracle,
                &[s],
                &[0.0],
                std::slice::from_mut(&mut script),
                None,
            )
            .unwrap();
            total += out[0].reward;
            advances += out[0].advanced as usize;
        }
        assert_eq!(total, advances as f64 * script.r_shape);
    }

    #[test]
    fn mem_shaped_without_mem_is_config_error() {
        let v = corpus_vocabulary();
        let s = &stacks(1)[0];
        let mut script = NarrationScript::default_script(&v).unwrap();
        let r = shape_batch(
            RewardMode::MemShaped,
            &[s],
            &[0.0],
            std::slice::from_mut(&mut script),
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
