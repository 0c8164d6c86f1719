use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Lec,
    BehaviorIndicator,
    Mediator,
    Demographic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub name: String,
    pub kind: NodeKind,
    /// Unobserved nodes can never enter an adjustment set.
    #[serde(default = "yes")]
    pub observed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<DagNode>,
    pub edges: Vec<DagEdge>,
}

/// Validated acyclic graph. Node indices follow the file order.
#[derive(Debug, Clone)]
pub struct CausalDag {
    pub nodes: Vec<DagNode>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CausalDag {
    pub fn new(file: DagFile) -> Result<Self, AnalysisError> {
        let mut index = BTreeMap::new();
        for (i, n) in file.nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(AnalysisError::InvalidDag(format!("duplicate node `{}`", n.name)));
            }
        }
        let k = file.nodes.len();
        let (mut parents, mut children) = (vec![Vec::new(); k], vec![Vec::new(); k]);
        for e in &file.edges {
            let lookup = |s: &str| index.get(s).copied().ok_or_else(|| AnalysisError::InvalidDag(format!("edge mentions unknown node `{s}`")));
            let (a, b) = (lookup(&e.from)?, lookup(&e.to)?);
            if a == b {
                return Err(AnalysisError::InvalidDag(format!("self loop on `{}`", e.from)));
            }
            if !children[a].contains(&b) {
                children[a].push(b);
                parents[b].push(a);
            }
        }
        // Kahn: anything left unprocessed sits on a cycle.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..k).filter(|&i| indeg[i] == 0).collect();
        let mut done = 0;
        while let Some(v) = queue.pop_front() {
            done += 1;
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if done < k {
            let cyc: Vec<&str> = (0..k).filter(|&i| indeg[i] > 0).map(|i| file.nodes[i].name.as_str()).collect();
            return Err(AnalysisError::InvalidDag(format!("cycle through {}", cyc.join(", "))));
        }
        Ok(CausalDag { nodes: file.nodes, index, parents, children })
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        let file: DagFile = serde_json::from_str(text).map_err(|e| AnalysisError::InvalidDag(e.to_string()))?;
        Self::new(file)
    }

    pub fn to_file(&self) -> DagFile {
        let mut edges = Vec::new();
        for (a, cs) in self.children.iter().enumerate() {
            for &b in cs {
                edges.push(DagEdge { from: self.nodes[a].name.clone(), to: self.nodes[b].name.clone() });
            }
        }
        DagFile { description: None, nodes: self.nodes.clone(), edges }
    }

    pub fn id(&self, name: &str) -> Result<usize, AnalysisError> {
        self.index.get(name).copied().ok_or_else(|| AnalysisError::InvalidArgument(format!("`{name}` is not a node of the DAG")))
    }

    pub fn node(&self, name: &str) -> Option<&DagNode> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// `v` and everything reachable along directed edges.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([v]);
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for &c in &self.children[u] {
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    fn ancestors_of(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen = set.clone();
        let mut stack: Vec<usize> = set.iter().copied().collect();
        while let Some(u) = stack.pop() {
            for &p in &self.parents[u] {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen
    }

    /// Whether `z` d-separates `x` and `y`. With `cut_out_of_x` the edges
    /// leaving `x` are ignored, which turns the test into the backdoor check.
    pub fn d_separated(&self, x: usize, y: usize, z: &BTreeSet<usize>, cut_out_of_x: bool) -> bool {
        if x == y {
            return false;
        }
        let opens_collider = self.ancestors_of(z);
        // (node, arrived from a child) / (node, arrived from a parent)
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([(x, true)]);
        while let Some((v, up)) = queue.pop_front() {
            if !seen.insert((v, up)) {
                continue;
            }
            if v == y {
                return false;
            }
            let children: &[usize] = if cut_out_of_x && v == x { &[] } else { &self.children[v] };
            let blocked = z.contains(&v);
            if up {
                if !blocked {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                    queue.extend(children.iter().map(|&c| (c, false)));
                }
            } else {
                if !blocked {
                    queue.extend(children.iter().map(|&c| (c, false)));
                }
                if opens_collider.contains(&v) {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        true
    }

    /// Smallest observed set of non-descendants of `exposure` that blocks every
    /// backdoor path to `outcome`; ties go to the lexicographically first set
    /// of names. `usable` restricts candidates further (e.g. to dataset columns).
    pub fn backdoor_adjustment_set(&self, exposure: &str, outcome: &str, usable: impl Fn(&str) -> bool) -> Result<Vec<String>, AnalysisError> {
        let (x, y) = (self.id(exposure)?, self.id(outcome)?);
        if x == y {
            return Err(AnalysisError::InvalidArgument("exposure and outcome must differ".into()));
        }
        let desc = self.descendants(x);
        let mut cands: Vec<(String, usize)> = (0..self.len())
            .filter(|&i| i != x && i != y && !desc.contains(&i) && self.nodes[i].observed && usable(&self.nodes[i].name))
            .map(|i| (self.nodes[i].name.clone(), i))
            .collect();
        cands.sort();
        const MAX_CANDIDATES: usize = 20;
        if cands.len() > MAX_CANDIDATES {
            return Err(AnalysisError::InvalidArgument(format!("{} adjustment candidates exceed the search limit of {MAX_CANDIDATES}", cands.len())));
        }
        for size in 0..=cands.len() {
            let mut comb: Vec<usize> = (0..size).collect();
            loop {
                let z: BTreeSet<usize> = comb.iter().map(|&k| cands[k].1).collect();
                if self.d_separated(x, y, &z, true) {
                    return Ok(comb.iter().map(|&k| cands[k].0.clone()).collect());
                }
                if !next_combination(&mut comb, cands.len()) {
                    break;
                }
            }
        }
        Err(AnalysisError::NotIdentifiable(format!(
            "no set of observed non-descendants of `{exposure}` blocks every backdoor path to `{outcome}`"
        )))
    }

    /// Names among `covariates` that descend from `exposure`.
    pub fn post_exposure(&self, exposure: &str, covariates: &[String]) -> Result<Vec<String>, AnalysisError> {
        let desc = self.descendants(self.id(exposure)?);
        Ok(covariates.iter().filter(|c| self.index.get(c.as_str()).is_some_and(|i| desc.contains(i))).cloned().collect())
    }

    /// Illustrative graph: LECs act on behaviors directly and through
    /// unmeasured opportunity; area income confounds LECs and behaviors and
    /// acts through unmeasured motivation.
    pub fn default_dag() -> Self {
        let node = |name: &str, kind, observed| DagNode { name: name.into(), kind, observed };
        let lecs = ["restaurant_density", "sports_facilities"];
        let behaviors = ["pct_fastfood_visits", "steps_per_hour_mean", "median_steps_per_hour", "pct_time_sedentary", "pct_sedentary_residents", "mean_sleep_h"];
        let mut nodes = vec![node("median_income", NodeKind::Demographic, true)];
        nodes.extend(lecs.iter().map(|n| node(n, NodeKind::Lec, true)));
        nodes.push(node("opportunity", NodeKind::Mediator, false));
        nodes.push(node("motivation", NodeKind::Mediator, false));
        nodes.extend(behaviors.iter().map(|n| node(n, NodeKind::BehaviorIndicator, true)));
        let mut edges = Vec::new();
        let mut edge = |a: &str, b: &str| edges.push(DagEdge { from: a.into(), to: b.into() });
        for l in lecs {
            edge("median_income", l);
            edge(l, "opportunity");
        }
        edge("median_income", "motivation");
        for b in behaviors {
            edge("median_income", b);
            edge("opportunity", b);
            edge("motivation", b);
            for l in lecs {
                edge(l, b);
            }
        }
        let file = DagFile { description: Some("illustrative default; mediators are unmeasured".into()), nodes, edges };
        CausalDag::new(file).expect("default DAG is acyclic")
    }
}

/// Advances `comb` (strictly increasing indices below `n`) to the next
/// combination in lexicographic order.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    for i in (0..k).rev() {
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
