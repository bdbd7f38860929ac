//! Tier state shared by the lanes and the single numeric transition that
//! every action performs on it.

use std::sync::{Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::precision::{downscale_into, downscale_rne, Half};
use crate::scheduler::{Action, ActionKind, Stream, UpdatePlan};
use crate::sharding::{Residency, ShardedOptimizer, Subgroup};

use super::adam::{adam_step, adam_step_subgroup, AdamHyper};

struct HostEntry {
    sg: Subgroup,
    /// FP32 gradients on the host, when flushed there.
    grads: Option<Vec<f32>>,
    /// Downscaled parameters waiting for upload.
    staged16: Option<Vec<Half>>,
    /// Set from the first prefetch until the last flush of the subgroup.
    checked_out: bool,
    updated: bool,
}

#[derive(Default)]
struct Staging {
    owner: Option<usize>,
    p: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    loaded: [bool; 3],
    flushed: [bool; 3],
    updated: bool,
}

impl Staging {
    fn busy(&self) -> bool {
        self.owner.is_some() && !self.flushed.iter().all(|f| *f)
    }
}

pub(crate) struct Runtime {
    host: Vec<Mutex<HostEntry>>,
    /// FP32 gradients kept on the fast tier.
    fast_grads: Vec<Mutex<Option<Vec<f32>>>>,
    staging: Vec<Mutex<Staging>>,
    model16: Vec<Mutex<Vec<Half>>>,
    slot_of: Vec<Option<usize>>,
    is_static: Vec<bool>,
    hyper: AdamHyper,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicking lane already aborts the run; keep the data reachable
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn idx(stream: Option<Stream>) -> usize {
    match stream {
        Some(Stream::Param) | None => 0,
        Some(Stream::Momentum) => 1,
        Some(Stream::Variance) => 2,
    }
}

impl Runtime {
    pub(crate) fn new(
        plan: &UpdatePlan,
        opt: ShardedOptimizer,
        host_grads: Vec<Option<Vec<f32>>>,
        fast_grads: Vec<Option<Vec<f32>>>,
        slots: usize,
        hyper: AdamHyper,
    ) -> Self {
        let model16 = opt
            .subgroups
            .iter()
            .map(|sg| Mutex::new(opt.model16[sg.offset..sg.offset + sg.size()].to_vec()))
            .collect();
        let host = opt
            .subgroups
            .into_iter()
            .zip(host_grads)
            .map(|(sg, grads)| {
                Mutex::new(HostEntry {
                    sg,
                    grads,
                    staged16: None,
                    checked_out: false,
                    updated: false,
                })
            })
            .collect();
        Runtime {
            host,
            fast_grads: fast_grads.into_iter().map(Mutex::new).collect(),
            staging: (0..slots).map(|_| Mutex::new(Staging::default())).collect(),
            model16,
            slot_of: plan.slot_of(slots),
            is_static: (0..plan.num_subgroups).map(|i| plan.is_static(i)).collect(),
            hyper,
        }
    }

    pub(crate) fn apply(&self, a: &Action) -> Result<()> {
        let fail = |reason: String| Error::Consistency {
            action: a.id,
            kind: a.kind.to_string(),
            reason,
        };
        let i = a.subgroup();
        use ActionKind::*;
        match a.kind {
            CpuUpdate => {
                let mut e = lock(&self.host[i]);
                if e.checked_out {
                    return Err(fail(format!("subgroup {i} is checked out to the fast tier")));
                }
                if e.updated {
                    return Err(fail(format!("subgroup {i} updated twice")));
                }
                let g = e
                    .grads
                    .take()
                    .ok_or_else(|| fail(format!("no host gradients for subgroup {i}")))?;
                adam_step_subgroup(&mut e.sg, &g, &self.hyper)?;
                e.updated = true;
            }
            CpuDownscale => {
                for &j in &a.subgroups {
                    let mut e = lock(&self.host[j]);
                    if e.checked_out || !e.updated {
                        return Err(fail(format!("subgroup {j} is not updated on the host")));
                    }
                    e.staged16 = Some(downscale_rne(&e.sg.params));
                }
            }
            H2DParams16 => {
                let staged = lock(&self.host[i])
                    .staged16
                    .take()
                    .ok_or_else(|| fail(format!("subgroup {i} was not downscaled")))?;
                lock(&self.model16[i]).copy_from_slice(&staged);
            }
            PrefetchP | PrefetchM | PrefetchV => {
                let mut st = self.slot(i, &fail)?;
                if st.owner != Some(i) {
                    if st.busy() {
                        return Err(fail(format!(
                            "staging slot still holds subgroup {:?}",
                            st.owner
                        )));
                    }
                    *st = Staging {
                        owner: Some(i),
                        ..Default::default()
                    };
                }
                let mut e = lock(&self.host[i]);
                if e.updated {
                    return Err(fail(format!("subgroup {i} was already updated")));
                }
                e.checked_out = true;
                let k = idx(a.stream);
                let src = match k {
                    0 => &e.sg.params,
                    1 => &e.sg.momentum,
                    _ => &e.sg.variance,
                };
                let dst = match k {
                    0 => &mut st.p,
                    1 => &mut st.m,
                    _ => &mut st.v,
                };
                dst.clear();
                dst.extend_from_slice(src);
                st.loaded[k] = true;
            }
            GpuUpdate => {
                let fast = lock(&self.fast_grads[i]).take();
                if self.is_static[i] {
                    let mut e = lock(&self.host[i]);
                    if e.sg.residency != Residency::StaticFastResident {
                        return Err(fail(format!("subgroup {i} is not resident")));
                    }
                    let g = fast.ok_or_else(|| fail(format!("no gradients for subgroup {i}")))?;
                    adam_step_subgroup(&mut e.sg, &g, &self.hyper)?;
                    e.updated = true;
                    return Ok(());
                }
                let mut st = self.owned(i, &fail)?;
                if !st.loaded.iter().all(|l| *l) || st.updated {
                    return Err(fail(format!("staging for subgroup {i} is not ready")));
                }
                let g = match fast {
                    Some(g) => g,
                    None => lock(&self.host[i])
                        .grads
                        .take()
                        .ok_or_else(|| fail(format!("no gradients for subgroup {i}")))?,
                };
                let st = &mut *st;
                adam_step(&mut st.p, &mut st.m, &mut st.v, &g, &self.hyper)?;
                st.updated = true;
            }
            FlushOutModel16 => {
                let mut out = lock(&self.model16[i]);
                if self.is_static[i] {
                    let e = lock(&self.host[i]);
                    if !e.updated {
                        return Err(fail(format!("subgroup {i} not updated")));
                    }
                    downscale_into(&e.sg.params, &mut out);
                } else {
                    let st = self.owned(i, &fail)?;
                    if !st.updated {
                        return Err(fail(format!("subgroup {i} not updated")));
                    }
                    downscale_into(&st.p, &mut out);
                }
            }
            FlushOutP | FlushOutM | FlushOutV => {
                let mut st = self.owned(i, &fail)?;
                if !st.updated {
                    return Err(fail(format!("flushing subgroup {i} before its update")));
                }
                let k = idx(a.stream);
                let mut e = lock(&self.host[i]);
                let (src, dst) = match k {
                    0 => (&st.p, &mut e.sg.params),
                    1 => (&st.m, &mut e.sg.momentum),
                    _ => (&st.v, &mut e.sg.variance),
                };
                dst.copy_from_slice(src);
                st.flushed[k] = true;
                if st.flushed.iter().all(|f| *f) {
                    e.checked_out = false;
                    e.updated = true;
                }
            }
            GradFlush => {}
        }
        Ok(())
    }

    fn slot(&self, i: usize, fail: &dyn Fn(String) -> Error) -> Result<MutexGuard<'_, Staging>> {
        let s = self.slot_of[i].ok_or_else(|| fail(format!("subgroup {i} has no staging slot")))?;
        Ok(lock(&self.staging[s]))
    }

    fn owned(&self, i: usize, fail: &dyn Fn(String) -> Error) -> Result<MutexGuard<'_, Staging>> {
        let st = self.slot(i, fail)?;
        if st.owner != Some(i) {
            return Err(fail(format!("staging slot belongs to {:?}", st.owner)));
        }
        Ok(st)
    }

    /// Reassemble the optimizer; every subgroup must have been updated and
    /// returned to the host.
    pub(crate) fn finish(self, template: (usize, Vec<usize>)) -> Result<ShardedOptimizer> {
        let (total, static_ids) = template;
        let mut model16 = Vec::with_capacity(total);
        for m in self.model16 {
            model16.extend(m.into_inner().unwrap_or_else(|e| e.into_inner()));
        }
        let mut subgroups = Vec::with_capacity(self.host.len());
        for h in self.host {
            let e = h.into_inner().unwrap_or_else(|e| e.into_inner());
            if !e.updated || e.checked_out {
                return Err(Error::Consistency {
                    action: usize::MAX,
                    kind: "finish".into(),
                    reason: format!("subgroup {} did not complete its update", e.sg.id),
                });
            }
            subgroups.push(e.sg);
        }
        let mut opt = ShardedOptimizer {
            subgroups,
            model16,
            total_params: total,
        };
        opt.set_residency(&static_ids);
        Ok(opt)
    }
}
