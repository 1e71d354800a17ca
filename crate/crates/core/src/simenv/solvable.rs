use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SimError, SyntheticTask};
use crate::money::Credits;

pub const BRUTE_FORCE_MAX_TOOLS: usize = 12;
pub const BRUTE_FORCE_MAX_FACTS: usize = 6;

/// A set of tools whose facts cover every required fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cover {
    pub tools: Vec<String>,
    /// Sum of per-call prices, one call per tool.
    pub cost: Credits,
}

/// Bit `i` is set when the tool provides the `i`th required fact.
fn fact_masks(task: &SyntheticTask) -> (u32, Vec<(u32, &str, &Credits)>) {
    let index: BTreeMap<&str, usize> =
        task.required_facts().iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
    let full = if index.is_empty() { 0 } else { (1u32 << index.len()) - 1 };
    let tools = task
        .tools()
        .map(|tool| {
            let mask = tool
                .truth
                .provides_facts
                .iter()
                .filter_map(|f| index.get(f.as_str()))
                .fold(0u32, |m, &i| m | (1 << i));
            (mask, tool.spec.tool_id.as_str(), &tool.spec.per_call_cost)
        })
        .collect();
    (full, tools)
}

/// Cheapest covering set by DP over fact bitmasks; `None` when some required
/// fact has no provider. Ties go to the earlier tool in market order.
pub fn min_cover(task: &SyntheticTask) -> Option<Cover> {
    let (full, tools) = fact_masks(task);
    let size = full as usize + 1;
    let mut best: Vec<Option<(Credits, Vec<usize>)>> = vec![None; size];
    best[0] = Some((Credits::zero(), Vec::new()));
    for (ti, (mask, _, cost)) in tools.iter().enumerate() {
        if *mask == 0 {
            continue;
        }
        // Descending over states so each tool is used at most once.
        for state in (0..size).rev() {
            let Some((base, picked)) = best[state].clone() else { continue };
            let next = state | *mask as usize;
            if next == state {
                continue;
            }
            let candidate = &base + *cost;
            let better = match &best[next] {
                None => true,
                Some((current, _)) => candidate < *current,
            };
            if better {
                let mut chosen = picked;
                chosen.push(ti);
                best[next] = Some((candidate, chosen));
            }
        }
    }
    let (cost, picked) = best[full as usize].take()?;
    Some(Cover { tools: picked.into_iter().map(|i| tools[i].1.to_string()).collect(), cost })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solvability {
    pub solvable: bool,
    pub min_single_pass_cost: Option<Credits>,
    /// Minimum over minimal covers of the expected retry-until-success cost.
    pub min_expected_cost: Option<Credits>,
    pub cover: Option<Cover>,
}

/// Exhaustive check over every tool subset; only for small markets.
pub fn brute_force_solvable(task: &SyntheticTask) -> Result<Solvability, SimError> {
    let n_tools = task.task.market.len();
    let n_facts = task.required_facts().len();
    if n_tools > BRUTE_FORCE_MAX_TOOLS || n_facts > BRUTE_FORCE_MAX_FACTS {
        return Err(SimError::TooLarge {
            tools: n_tools,
            facts: n_facts,
            max_tools: BRUTE_FORCE_MAX_TOOLS,
            max_facts: BRUTE_FORCE_MAX_FACTS,
        });
    }
    let (full, tools) = fact_masks(task);
    let probs: Vec<_> = task.tools().map(|t| t.truth.success_prob.clone()).collect();
    let mut single: Option<(Credits, u32)> = None;
    let mut expected: Option<Credits> = None;
    for subset in 0u32..(1 << tools.len()) {
        let covered = members(subset).fold(0, |m, i| m | tools[i].0);
        if covered & full != full {
            continue;
        }
        let minimal = members(subset).all(|drop| {
            members(subset).filter(|&i| i != drop).fold(0, |m, i| m | tools[i].0) & full != full
        });
        if !minimal {
            continue;
        }
        let cost: Credits = members(subset).map(|i| tools[i].2).sum();
        if single.as_ref().is_none_or(|(c, _)| cost < *c) {
            single = Some((cost, subset));
        }
        if members(subset).all(|i| !probs[i].is_zero()) {
            let exp: Credits = members(subset).map(|i| tools[i].2 / &probs[i]).sum();
            if expected.as_ref().is_none_or(|c| exp < *c) {
                expected = Some(exp);
            }
        }
    }
    let cover = single.as_ref().map(|(cost, subset)| Cover {
        tools: members(*subset).map(|i| tools[i].1.to_string()).collect(),
        cost: cost.clone(),
    });
    Ok(Solvability {
        solvable: single.as_ref().is_some_and(|(c, _)| *c <= task.task.budget),
        min_single_pass_cost: single.map(|(c, _)| c),
        min_expected_cost: expected,
        cover,
    })
}

fn members(subset: u32) -> impl Iterator<Item = usize> {
    (0..32).filter(move |i| subset & (1 << i) != 0)
}
