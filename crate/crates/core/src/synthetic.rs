//! A small simulated fine-management process, used for smoke runs and
//! examples when no real event log is at hand.
//!
//! Every case starts with `Create Fine`. It is either paid right away or a
//! notification is sent, after which the offender may appeal (more likely
//! for large amounts). Unpaid cases collect a penalty. Traces carry a
//! categorical `channel`, a numerical `amount`, and the label `appealed`
//! (`True` iff the trace contains `Appeal`).

use chrono::Duration;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::Result;
use crate::eventlog::{apply_labeler, Event, EventLog, LabelerSpec, Timestamp, Trace};

pub const TOY_LABEL: &str = "appealed";

fn hours<R: Rng>(rng: &mut R, mean: f64) -> Duration {
    let exp = Exp::new(1.0 / mean).expect("positive mean");
    Duration::seconds((exp.sample(rng) * 3600.0).round() as i64 + 60)
}

/// `n` simulated traces starting at `start`, one case arriving roughly
/// every eight hours.
pub fn toy_log(n: usize, seed: u64, start: Timestamp) -> Result<EventLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrival = start;
    let mut traces = Vec::with_capacity(n);
    for i in 0..n {
        arrival += hours(&mut rng, 8.0);
        let amount = (rng.random_range(20.0..400.0_f64) * 100.0).round() / 100.0;
        let channel = if rng.random_bool(0.6) { "web" } else { "mail" };
        let mut t = arrival;
        let mut events = vec![Event::new("Create Fine", t)];
        let mut push = |name: &str, mean_h: f64, rng: &mut ChaCha8Rng, t: &mut Timestamp| {
            *t += hours(rng, mean_h);
            events.push(Event::new(name, *t));
        };
        if rng.random_bool(0.35) {
            push("Payment", 12.0, &mut rng, &mut t);
        } else {
            push("Send Fine", 48.0, &mut rng, &mut t);
            let p_appeal = 0.15 + 0.5 * (amount / 400.0);
            if rng.random_bool(p_appeal) {
                push("Appeal", 72.0, &mut rng, &mut t);
                if rng.random_bool(0.5) {
                    push("Appeal Granted", 120.0, &mut rng, &mut t);
                } else {
                    push("Add Penalty", 24.0, &mut rng, &mut t);
                    push("Payment", 96.0, &mut rng, &mut t);
                }
            } else if rng.random_bool(0.6) {
                push("Payment", 72.0, &mut rng, &mut t);
            } else {
                push("Add Penalty", 240.0, &mut rng, &mut t);
                if rng.random_bool(0.7) {
                    push("Payment", 120.0, &mut rng, &mut t);
                }
            }
        }
        traces.push(
            Trace::new(format!("case-{i:05}"), events)
                .with_cat("channel", channel)
                .with_num("amount", amount),
        );
    }
    let log = EventLog::new(traces)?.with_meta("concept:name", "toy fines");
    apply_labeler(
        &log,
        &LabelerSpec::ActivityPresence {
            activity: "Appeal".into(),
        },
        TOY_LABEL,
    )
}
