use crate::error::{arg, Result};

/// Kinematic tree plus the joint ordering used to lay out the spatial branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    /// `(parent, child)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub joint_order: Vec<usize>,
    joints: usize,
}

/// Parent of each joint in the common 25-joint layout; the root (spine base)
/// is its own parent.
const PARENTS_25: [usize; 25] = [0, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11];

impl SkeletonTopology {
    pub fn new(joints: usize, edges: Vec<(usize, usize)>, joint_order: Vec<usize>) -> Result<Self> {
        if joints == 0 {
            return arg("topology needs at least one joint");
        }
        if edges.len() != joints - 1 {
            return arg(format!("a tree over {joints} joints has {} edges, got {}", joints - 1, edges.len()));
        }
        let mut parent = vec![None; joints];
        for &(p, c) in &edges {
            if p >= joints || c >= joints || p == c {
                return arg(format!("edge ({p}, {c}) out of range"));
            }
            if parent[c].replace(p).is_some() {
                return arg(format!("joint {c} has two parents"));
            }
        }
        // exactly one root, and every joint reaches it
        let roots: Vec<usize> = (0..joints).filter(|&j| parent[j].is_none()).collect();
        if roots.len() != 1 {
            return arg(format!("expected one root, found {}", roots.len()));
        }
        for j in 0..joints {
            let (mut cur, mut hops) = (j, 0);
            while let Some(p) = parent[cur] {
                cur = p;
                hops += 1;
                if hops > joints {
                    return arg("topology contains a cycle");
                }
            }
        }
        let mut seen = vec![false; joints];
        if joint_order.len() != joints || joint_order.iter().any(|&j| j >= joints || std::mem::replace(&mut seen[j], true)) {
            return arg("joint_order is not a permutation");
        }
        Ok(Self { edges, joint_order, joints })
    }

    /// 25-joint tree with a depth-first joint order.
    pub fn ntu25() -> Self {
        let edges: Vec<(usize, usize)> = (1..25).map(|c| (PARENTS_25[c], c)).collect();
        Self::from_edges_dfs(25, edges)
    }

    /// Simple chain `0 - 1 - ... - (J-1)`.
    pub fn chain(joints: usize) -> Self {
        let edges = (1..joints).map(|c| (c - 1, c)).collect();
        Self::from_edges_dfs(joints, edges)
    }

    /// The shipped topology for a joint count: the 25-joint tree when
    /// `joints == 25`, otherwise a chain.
    pub fn default_for(joints: usize) -> Self {
        if joints == 25 {
            Self::ntu25()
        } else {
            Self::chain(joints)
        }
    }

    fn from_edges_dfs(joints: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut children = vec![Vec::new(); joints];
        let mut has_parent = vec![false; joints];
        for &(p, c) in &edges {
            children[p].push(c);
            has_parent[c] = true;
        }
        for ch in &mut children {
            ch.sort_unstable();
        }
        let root = (0..joints).find(|&j| !has_parent[j]).unwrap_or(0);
        let mut order = Vec::with_capacity(joints);
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(children[j].iter().rev());
        }
        Self::new(joints, edges, order).expect("built-in topology is a tree")
    }

    pub fn joints(&self) -> usize {
        self.joints
    }
}
