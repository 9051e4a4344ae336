use std::collections::BTreeMap;

use super::{leg_success_probability, ratio, DEFAULT_DELTA};
use crate::decoder::{ExecNode, ExecutablePlan};
use crate::geo::LocalXY;
use crate::sim::{GuardContext, GuardDecision, StepGuard, StochasticEdgeModel};

/// Online budget guard for farm missions. Before each leg it checks that
/// the target still leaves a safe way home; otherwise it redirects to the
/// best safe pending tree of the plan, or sends the robot home.
#[derive(Debug, Clone)]
pub struct SopGuard {
    model: StochasticEdgeModel,
    delta: f64,
    targets: BTreeMap<String, (LocalXY, f64)>,
}

impl SopGuard {
    pub fn new(model: StochasticEdgeModel, delta: f64, targets: BTreeMap<String, (LocalXY, f64)>) -> Self {
        Self { model, delta, targets }
    }

    /// Guard over every tree the plan may visit, each worth reward 1.
    pub fn for_plan(plan: &ExecutablePlan, model: StochasticEdgeModel, delta: f64) -> Self {
        fn walk(node: &ExecNode, out: &mut BTreeMap<String, (LocalXY, f64)>) {
            match node {
                ExecNode::Sequence { children } => children.iter().for_each(|c| walk(c, out)),
                ExecNode::Task(t) => {
                    if let (Some(id), Some(p)) = (&t.tree_id, t.target) {
                        out.insert(id.clone(), (p, 1.0));
                    }
                }
                ExecNode::Condition { then_branch, else_branch, .. } => {
                    walk(then_branch, out);
                    if let Some(e) = else_branch {
                        walk(e, out);
                    }
                }
            }
        }
        let mut targets = BTreeMap::new();
        walk(&plan.nodes, &mut targets);
        Self::new(model, delta, targets)
    }

    pub fn with_default_delta(plan: &ExecutablePlan, model: StochasticEdgeModel) -> Self {
        Self::for_plan(plan, model, DEFAULT_DELTA)
    }

    fn safe(&self, ctx: &GuardContext<'_>, target: LocalXY) -> bool {
        let p = leg_success_probability(
            &self.model,
            ctx.position.distance(target),
            target.distance(ctx.home),
            ctx.spent,
            ctx.budget,
        );
        p >= 1.0 - self.delta
    }
}

impl StepGuard for SopGuard {
    fn before_navigation(&mut self, ctx: &GuardContext<'_>) -> GuardDecision {
        if ctx.returning || self.safe(ctx, ctx.target) {
            return GuardDecision::Proceed;
        }
        let mut best: Option<(f64, &String, LocalXY)> = None;
        for (id, &(p, reward)) in &self.targets {
            if ctx.visited.contains(id) || Some(id.as_str()) == ctx.target_tree || !self.safe(ctx, p) {
                continue;
            }
            let score = ratio(reward, ctx.position.distance(p));
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, id, p));
            }
        }
        match best {
            Some((_, id, p)) => GuardDecision::Redirect { target: p, tree_id: Some(id.clone()) },
            None => GuardDecision::ReturnHome,
        }
    }
}
