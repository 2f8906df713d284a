use std::collections::HashSet;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{check, run, Control, FitError, FitResult, FitStatus, Optimizer, Progress};
use crate::model::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FitEvent {
    Progress(Progress),
    Finished {
        status: FitStatus,
        chi2: Option<f64>,
        error: Option<String>,
        result: Option<FitResult>,
    },
}

impl FitEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self, FitEvent::Finished { .. })
    }
}

/// Events so far plus a receiver for the rest, in emission order.
pub struct Subscription {
    pub replay: Vec<FitEvent>,
    pub receiver: Receiver<FitEvent>,
}

#[derive(Default)]
struct Shared {
    log: Vec<FitEvent>,
    subscribers: Vec<Sender<FitEvent>>,
    done: bool,
}

impl Shared {
    fn push(&mut self, ev: FitEvent) {
        self.subscribers.retain(|s| s.send(ev.clone()).is_ok());
        if ev.is_terminal() {
            self.done = true;
            self.subscribers.clear();
        }
        self.log.push(ev);
    }
}

fn busy() -> &'static Mutex<HashSet<u64>> {
    static BUSY: OnceLock<Mutex<HashSet<u64>>> = OnceLock::new();
    BUSY.get_or_init(Default::default)
}

struct PoolLease(Vec<u64>);

impl Drop for PoolLease {
    fn drop(&mut self) {
        let mut b = busy().lock();
        for id in &self.0 {
            b.remove(id);
        }
    }
}

/// A fit running on a background thread.
pub struct FitHandle {
    control: Control,
    shared: Arc<Mutex<Shared>>,
    join: Option<JoinHandle<Result<FitResult, FitError>>>,
}

impl FitHandle {
    /// Starts a fit. Fails if any pool parameter is already being fitted.
    pub fn start<O>(target: Arc<O>, optimizer: Optimizer) -> Result<FitHandle, FitError>
    where
        O: Objective + Send + ?Sized + 'static,
    {
        check(&*target, &optimizer)?;
        let params = target.parameters();
        let ids: Vec<u64> = params.iter().map(|p| p.id()).collect();
        {
            let mut b = busy().lock();
            if let Some(p) = params.iter().find(|p| b.contains(&p.id())) {
                return Err(FitError::Busy(p.name()));
            }
            b.extend(ids.iter().copied());
        }
        let lease = PoolLease(ids);
        let shared = Arc::new(Mutex::new(Shared::default()));
        let sink_shared = shared.clone();
        let control = Control::with_sink(move |p| sink_shared.lock().push(FitEvent::Progress(p.clone())));
        let thread_control = control.clone();
        let thread_shared = shared.clone();
        let join = std::thread::Builder::new()
            .name("fit".into())
            .spawn(move || {
                let out = run(&*target, &optimizer, &thread_control);
                let ev = match &out {
                    Ok(r) => FitEvent::Finished {
                        status: r.status,
                        chi2: Some(r.chi2),
                        error: None,
                        result: Some(r.clone()),
                    },
                    Err(e) => FitEvent::Finished {
                        status: FitStatus::Failed,
                        chi2: None,
                        error: Some(e.to_string()),
                        result: None,
                    },
                };
                drop(lease);
                thread_shared.lock().push(ev);
                out
            })
            .expect("spawn fit thread");
        Ok(FitHandle {
            control,
            shared,
            join: Some(join),
        })
    }

    /// Requests a stop; the optimizer returns its best point within one
    /// iteration.
    pub fn interrupt(&self) {
        self.control.interrupt();
    }

    pub fn subscribe(&self) -> Subscription {
        let mut s = self.shared.lock();
        let (tx, rx) = channel();
        if !s.done {
            s.subscribers.push(tx);
        }
        Subscription {
            replay: s.log.clone(),
            receiver: rx,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.shared.lock().done
    }

    /// Reduced χ² values reported so far.
    pub fn history(&self) -> Vec<f64> {
        self.shared
            .lock()
            .log
            .iter()
            .filter_map(|e| match e {
                FitEvent::Progress(p) => Some(p.chi2),
                _ => None,
            })
            .collect()
    }

    pub fn wait(mut self) -> Result<FitResult, FitError> {
        self.join
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| FitError::Panicked)?
    }
}

impl Drop for FitHandle {
    fn drop(&mut self) {
        if let Some(j) = self.join.take() {
            self.control.interrupt();
            let _ = j.join();
        }
    }
}
