use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderNode {
    pub name: String,
    pub dependencies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("output feature `{feature}` depends on undeclared output `{dependency}`")]
    UnknownDependency { feature: String, dependency: String },
    /// Nodes of one cycle, each feeding the next and the last feeding the first.
    #[error("dependency cycle among {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Topological order of output decoders. Among nodes that are ready at the
/// same time the one declared first goes first.
pub fn build_dependency_order(nodes: &[DecoderNode]) -> Result<Vec<String>, DagError> {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    // deps[i]: indices node i depends on
    let mut deps: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
    for n in nodes {
        let mut d = Vec::new();
        for dep in &n.dependencies {
            let &j = index
                .get(dep.as_str())
                .ok_or_else(|| DagError::UnknownDependency {
                    feature: n.name.clone(),
                    dependency: dep.clone(),
                })?;
            if !d.contains(&j) {
                d.push(j);
            }
        }
        deps.push(d);
    }

    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut pending: Vec<usize> = deps.iter().map(Vec::len).collect();
    for (i, d) in deps.iter().enumerate() {
        for &j in d {
            dependents[j].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &k in &dependents[i] {
            pending[k] -= 1;
            if pending[k] == 0 {
                ready.insert(k);
            }
        }
    }

    if order.len() < nodes.len() {
        // Every unplaced node still waits on another unplaced node, so
        // following those dependencies must revisit a node.
        let start = (0..nodes.len()).find(|&i| pending[i] > 0).unwrap();
        let mut walk = vec![start];
        let mut cur = start;
        loop {
            cur = *deps[cur].iter().find(|&&j| pending[j] > 0).unwrap();
            if let Some(pos) = walk.iter().position(|&w| w == cur) {
                let mut cycle: Vec<String> = walk[pos..].iter().map(|&i| nodes[i].name.clone()).collect();
                cycle.reverse();
                return Err(DagError::Cycle(cycle));
            }
            walk.push(cur);
        }
    }
    Ok(order.into_iter().map(|i| nodes[i].name.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, deps: &[&str]) -> DecoderNode {
        DecoderNode {
            name: name.into(),
            dependencies: deps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn no_dependencies_keeps_declaration_order() {
        let order = build_dependency_order(&[node("c", &[]), node("a", &[]), node("b", &[])]).unwrap();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn dependency_moves_origin_first() {
        let order = build_dependency_order(&[node("b", &["a"]), node("a", &[])]).unwrap();
        assert_eq!(order, ["a", "b"]);
    }

    #[test]
    fn two_cycle_named() {
        let err = build_dependency_order(&[node("a", &["b"]), node("b", &["a"])]).unwrap_err();
        let DagError::Cycle(names) = err else { panic!() };
        let set: BTreeSet<_> = names.iter().map(String::as_str).collect();
        assert_eq!(set, BTreeSet::from(["a", "b"]));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let err = build_dependency_order(&[node("a", &["a"])]).unwrap_err();
        assert_eq!(err, DagError::Cycle(vec!["a".into()]));
    }

    #[test]
    fn unknown_dependency() {
        let err = build_dependency_order(&[node("a", &["z"])]).unwrap_err();
        assert!(matches!(err, DagError::UnknownDependency { .. }));
    }
}
