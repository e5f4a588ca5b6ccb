//! Arena-backed search tree, UCT selection, and backup.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::MaskedState;

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Clone, Debug)]
pub struct Node {
    pub state: MaskedState,
    /// 0 at the root; a node at depth `d > 0` sits at schedule level `d - 1`.
    pub depth: usize,
    pub parent: Option<NodeId>,
    /// Index of the action that created this node.
    pub action: Option<usize>,
    /// Children in creation order.
    pub children: Vec<NodeId>,
    pub untried: VecDeque<usize>,
    pub visits: u64,
    pub reward_sum: f64,
    /// No untried actions anywhere below; selection skips it.
    pub exhausted: bool,
    /// Rollout seed, for stochastic actions.
    pub seed: Option<u64>,
}

impl Node {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward_sum / self.visits as f64
        }
    }
}

/// Upper confidence bound for a child: mean reward plus
/// `c_exp * sqrt(ln(parent_visits) / visits)`; unvisited children score +∞.
pub fn uct_score(reward_sum: f64, visits: u64, parent_visits: u64, c_exp: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    let explore = if c_exp == 0.0 { 0.0 } else { c_exp * ((parent_visits.max(1) as f64).ln() / n).sqrt() };
    reward_sum / n + explore
}

#[derive(Clone, Debug)]
pub struct SearchTree {
    nodes: Vec<Node>,
    max_depth: usize,
}

/// Where selection stopped and how many exhausted children it stepped over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub node: NodeId,
    pub skipped_exhausted: u64,
}

impl SearchTree {
    pub fn new(root: MaskedState, action_count: usize, max_depth: usize) -> Self {
        let mut tree = Self { nodes: Vec::new(), max_depth };
        tree.push(root, None, None, action_count, None);
        tree
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Adds a node. Nodes at the last depth, and terminal states, get no
    /// untried actions and start out exhausted.
    pub fn push(
        &mut self,
        state: MaskedState,
        parent: Option<NodeId>,
        action: Option<usize>,
        action_count: usize,
        seed: Option<u64>,
    ) -> NodeId {
        let depth = parent.map_or(0, |p| self.nodes[p].depth + 1);
        let leaf = depth >= self.max_depth || state.is_terminal();
        let untried = if leaf { VecDeque::new() } else { (0..action_count).collect() };
        let id = self.nodes.len();
        self.nodes.push(Node {
            state,
            depth,
            parent,
            action,
            children: Vec::new(),
            untried,
            visits: 0,
            reward_sum: 0.0,
            exhausted: leaf,
            seed,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        if leaf {
            self.propagate_exhaustion(id);
        }
        id
    }

    fn propagate_exhaustion(&mut self, from: NodeId) {
        let mut cur = self.nodes[from].parent;
        while let Some(p) = cur {
            let node = &self.nodes[p];
            if node.exhausted || !node.untried.is_empty() || node.children.iter().any(|&c| !self.nodes[c].exhausted) {
                break;
            }
            self.nodes[p].exhausted = true;
            cur = self.nodes[p].parent;
        }
    }

    /// Descends by maximal UCT until a node with untried actions. Ties go to
    /// the earlier child (registration order); exhausted subtrees are
    /// skipped.
    pub fn select(&self, c_exp: f64) -> Result<Selection> {
        if self.nodes[ROOT].exhausted {
            return Err(Error::TreeExhausted);
        }
        let mut id = ROOT;
        let mut skipped = 0;
        loop {
            let node = &self.nodes[id];
            if !node.untried.is_empty() {
                return Ok(Selection { node: id, skipped_exhausted: skipped });
            }
            let mut best: Option<(NodeId, f64)> = None;
            for &c in &node.children {
                let child = &self.nodes[c];
                if child.exhausted {
                    skipped += 1;
                    continue;
                }
                let score = uct_score(child.reward_sum, child.visits, node.visits, c_exp);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((c, score));
                }
            }
            // a non-exhausted node without untried actions has a live child
            id = best.expect("live child below a non-exhausted node").0;
        }
    }

    /// Adds `reward` to the node and every ancestor.
    pub fn backup(&mut self, from: NodeId, reward: f64) {
        let mut cur = Some(from);
        while let Some(id) = cur {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.reward_sum += reward;
            cur = node.parent;
        }
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            path.push(p);
            cur = self.nodes[p].parent;
        }
        path.reverse();
        path
    }

    /// Checks `visits(parent) >= Σ visits(children)` and child depths.
    pub fn check_consistency(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            let below: u64 = node.children.iter().map(|&c| self.nodes[c].visits).sum();
            if below > node.visits {
                return Err(Error::InvalidState(format!(
                    "node {id} has {} visits but its children have {below}",
                    node.visits
                )));
            }
            if let Some(c) = node.children.iter().find(|&&c| self.nodes[c].depth != node.depth + 1) {
                return Err(Error::InvalidState(format!("node {c} is not one level below its parent {id}")));
            }
        }
        Ok(())
    }

    pub fn dump(&self, action_ids: &[String], best: Option<NodeId>) -> TreeDump {
        let starred = best.map(|b| self.path(b)).unwrap_or_default();
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| DumpNode {
                id,
                parent: n.parent,
                depth: n.depth,
                action: n.action.map(|a| action_ids[a].clone()),
                ratio: n.state.residual_mask_ratio(),
                visits: n.visits,
                mean_reward: n.mean(),
                starred: starred.contains(&id),
            })
            .collect();
        TreeDump { nodes }
    }
}

/// Serializable snapshot of a search tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub nodes: Vec<DumpNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub action: Option<String>,
    pub ratio: f64,
    pub visits: u64,
    pub mean_reward: f64,
    pub starred: bool,
}

impl TreeDump {
    /// Indented rendering; `*` marks the path to the submitted terminal.
    pub fn render(&self) -> String {
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                children[p].push(n.id);
            }
        }
        let mut out = String::new();
        let mut stack: Vec<NodeId> = self.nodes.iter().filter(|n| n.parent.is_none()).map(|n| n.id).collect();
        stack.reverse();
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            let _ = writeln!(
                out,
                "{}{} {} depth={} rho={:.3} n={} mean={:.4}",
                "  ".repeat(n.depth),
                if n.starred { "*" } else { "-" },
                n.action.as_deref().unwrap_or("root"),
                n.depth,
                n.ratio,
                n.visits,
                n.mean_reward
            );
            stack.extend(children[id].iter().rev());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;

    fn state() -> MaskedState {
        MaskedState::fully_masked(&Vocabulary::toy("t", 4), vec![], 4).unwrap()
    }

    #[test]
    fn uct_examples() {
        let s = uct_score(2.0, 4, 8, 1.0);
        assert!((s - (0.5 + (8f64.ln() / 4.0).sqrt())).abs() < 1e-12);
        // independent evaluation: 0.5 + sqrt(ln 8 / 4)
        assert!((s - 1.221_013_443_300_441).abs() < 1e-12);
        assert_eq!(uct_score(2.0, 4, 8, 0.0), 0.5);
        assert_eq!(uct_score(0.0, 0, 8, 1.0), f64::INFINITY);
    }

    #[test]
    fn fresh_tree_selects_root() {
        let t = SearchTree::new(state(), 2, 3);
        assert_eq!(t.select(1.0).unwrap().node, ROOT);
    }

    #[test]
    fn backup_touches_the_whole_path() {
        let mut t = SearchTree::new(state(), 1, 5);
        let a = t.push(state(), Some(ROOT), Some(0), 1, None);
        let b = t.push(state(), Some(a), Some(0), 1, None);
        let c = t.push(state(), Some(b), Some(0), 1, None);
        t.backup(c, 1.0);
        assert_eq!(t.nodes().iter().filter(|n| n.visits == 1).count(), 4);
        t.backup(c, 0.0);
        assert_eq!(t.node(a).mean(), 0.5);
        t.check_consistency().unwrap();
    }

    #[test]
    fn leaves_exhaust_their_parents() {
        let mut t = SearchTree::new(state(), 1, 1);
        t.node_mut(ROOT).untried.clear();
        t.push(state(), Some(ROOT), Some(0), 1, None);
        assert!(t.node(ROOT).exhausted);
        assert!(matches!(t.select(1.0), Err(Error::TreeExhausted)));
    }

    #[test]
    fn render_marks_best_path() {
        let mut t = SearchTree::new(state(), 2, 2);
        let a = t.push(state(), Some(ROOT), Some(0), 2, None);
        t.backup(a, 1.0);
        let text = t.dump(&["x".into(), "y".into()], Some(a)).render();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().trim_start().starts_with("* x"));
    }
}
