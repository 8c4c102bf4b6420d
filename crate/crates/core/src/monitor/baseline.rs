//! Trailing-window baseline over the update stream.
//!
//! The baseline aggregates, per (prefix, origin): announcement counts and
//! active-announcement duration; and per prefix: total announcements and the
//! observed span since the prefix's first event. Batches fold in
//! chronologically and expire out of a configurable trailing window (default
//! 30 days). One origin is active per prefix at a time: a new origin's
//! announcement replaces the previous one's interval, a withdrawal closes it,
//! and a duplicate announcement refreshes it while still counting.
//!
//! Pairs that have already been alerted are excluded from accrual so that a
//! persistent attacker cannot launder its own announcements into the
//! baseline; their events still surface for evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::net::Ipv4Prefix;
use crate::Asn;

use super::{Alert, BgpUpdate, DetectorKind, MonitorError, UpdateKind};

const SEQUENCING_TOLERANCE_SECS: i64 = 60;

type Pair = (Ipv4Prefix, Asn);

/// Aggregates accrued during one batch period.
#[derive(Debug, Clone, Default)]
pub(crate) struct BatchStats {
    pub period: (i64, i64),
    pub ann_count: BTreeMap<Pair, u64>,
    pub total_count: BTreeMap<Ipv4Prefix, u64>,
    pub duration: BTreeMap<Pair, i64>,
    pub span: BTreeMap<Ipv4Prefix, i64>,
    /// First announcement timestamp per pair in this batch, exclusions
    /// included -- evaluation needs the raw announced set.
    pub announced: BTreeMap<Pair, i64>,
}

#[derive(Debug, Clone, Default)]
struct CarryState {
    /// Per prefix: the currently announced origin and when its interval opened.
    open: HashMap<Ipv4Prefix, (Asn, i64)>,
    /// Per prefix: timestamp of the first event ever seen.
    first_event: HashMap<Ipv4Prefix, i64>,
}

fn process_batch(
    carry: &mut CarryState,
    excluded: &BTreeSet<Pair>,
    updates: &[BgpUpdate],
    period_start: i64,
    period_end: i64,
) -> BatchStats {
    let mut stats = BatchStats {
        period: (period_start, period_end),
        ..BatchStats::default()
    };
    for update in updates {
        let ts = update.ts.clamp(period_start, period_end);
        match &update.kind {
            UpdateKind::Announce { .. } => {
                let origin = update.origin().expect("announce has origin");
                let pair = (update.prefix, origin);
                stats.announced.entry(pair).or_insert(update.ts);
                if excluded.contains(&pair) {
                    continue;
                }
                *stats.ann_count.entry(pair).or_insert(0) += 1;
                *stats.total_count.entry(update.prefix).or_insert(0) += 1;
                carry.first_event.entry(update.prefix).or_insert(ts);
                match carry.open.get(&update.prefix) {
                    Some(&(cur, _)) if cur == origin => {} // refresh, interval continues
                    Some(&(cur, since)) => {
                        *stats.duration.entry((update.prefix, cur)).or_insert(0) +=
                            ts - since.max(period_start);
                        carry.open.insert(update.prefix, (origin, ts));
                    }
                    None => {
                        carry.open.insert(update.prefix, (origin, ts));
                    }
                }
            }
            UpdateKind::Withdraw => {
                carry.first_event.entry(update.prefix).or_insert(ts);
                if let Some((cur, since)) = carry.open.remove(&update.prefix) {
                    *stats.duration.entry((update.prefix, cur)).or_insert(0) +=
                        ts - since.max(period_start);
                }
            }
        }
    }
    // Accrue still-open intervals and observed spans up to the period end.
    for (&prefix, &(origin, since)) in &carry.open {
        *stats.duration.entry((prefix, origin)).or_insert(0) +=
            period_end - since.max(period_start);
    }
    for (&prefix, &first) in &carry.first_event {
        let from = first.max(period_start);
        if from < period_end {
            *stats.span.entry(prefix).or_insert(0) += period_end - from;
        }
    }
    stats
}

/// Rolling counters over a trailing window of the stream.
#[derive(Debug, Clone)]
pub struct Baseline {
    window: (i64, i64),
    window_secs: i64,
    batches: VecDeque<BatchStats>,
    ann_count: BTreeMap<Pair, u64>,
    total_count: BTreeMap<Ipv4Prefix, u64>,
    duration: BTreeMap<Pair, i64>,
    span: BTreeMap<Ipv4Prefix, i64>,
    carry: CarryState,
    excluded: BTreeSet<Pair>,
}

impl Baseline {
    pub fn new(start: i64, window_secs: i64) -> Self {
        Baseline {
            window: (start, start),
            window_secs: window_secs.max(1),
            batches: VecDeque::new(),
            ann_count: BTreeMap::new(),
            total_count: BTreeMap::new(),
            duration: BTreeMap::new(),
            span: BTreeMap::new(),
            carry: CarryState::default(),
            excluded: BTreeSet::new(),
        }
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn ann_count(&self, prefix: &Ipv4Prefix, origin: Asn) -> u64 {
        self.ann_count.get(&(*prefix, origin)).copied().unwrap_or(0)
    }

    pub fn total_count(&self, prefix: &Ipv4Prefix) -> u64 {
        self.total_count.get(prefix).copied().unwrap_or(0)
    }

    pub fn active_duration(&self, prefix: &Ipv4Prefix, origin: Asn) -> i64 {
        self.duration.get(&(*prefix, origin)).copied().unwrap_or(0)
    }

    pub fn observed_span(&self, prefix: &Ipv4Prefix) -> i64 {
        self.span.get(prefix).copied().unwrap_or(0)
    }

    /// Exclude a pair from all future accrual (it keeps whatever it accrued
    /// before the first alert).
    pub fn exclude_pair(&mut self, prefix: Ipv4Prefix, origin: Asn) {
        self.excluded.insert((prefix, origin));
    }

    pub fn is_excluded(&self, prefix: &Ipv4Prefix, origin: Asn) -> bool {
        self.excluded.contains(&(*prefix, origin))
    }

    fn check_sequencing(&self, batch: &[BgpUpdate]) -> Result<(), MonitorError> {
        let mut last = self.window.1;
        for update in batch {
            if update.ts + SEQUENCING_TOLERANCE_SECS < last {
                return Err(MonitorError::Sequencing {
                    ts: update.ts,
                    last,
                    tolerance: SEQUENCING_TOLERANCE_SECS,
                });
            }
            last = last.max(update.ts);
        }
        Ok(())
    }

    /// Fold a batch; the period closes at the batch's own maximum timestamp.
    pub fn update(&mut self, batch: &[BgpUpdate]) -> Result<(), MonitorError> {
        let end = batch
            .iter()
            .map(|u| u.ts)
            .max()
            .unwrap_or(self.window.1)
            .max(self.window.1);
        self.update_until(batch, end)
    }

    /// Fold a batch, accruing open intervals and spans up to `period_end`,
    /// then expire batches that fell out of the trailing window.
    pub fn update_until(&mut self, batch: &[BgpUpdate], period_end: i64) -> Result<(), MonitorError> {
        self.check_sequencing(batch)?;
        let period_start = self.window.1;
        let period_end = period_end.max(period_start);
        let stats = process_batch(
            &mut self.carry,
            &self.excluded,
            batch,
            period_start,
            period_end,
        );
        add_stats(
            &stats,
            &mut self.ann_count,
            &mut self.total_count,
            &mut self.duration,
            &mut self.span,
        );
        self.batches.push_back(stats);
        self.window.1 = period_end;
        let cutoff = self.window.1 - self.window_secs;
        self.window.0 = self.window.0.max(cutoff);
        while let Some(front) = self.batches.front() {
            if front.period.1 > cutoff {
                break;
            }
            let expired = self.batches.pop_front().unwrap();
            sub_stats(
                &expired,
                &mut self.ann_count,
                &mut self.total_count,
                &mut self.duration,
                &mut self.span,
            );
        }
        Ok(())
    }

    /// Stats the batch would contribute if folded now, without mutating the
    /// baseline. Used to evaluate an hour before committing it.
    pub(crate) fn preview(&self, batch: &[BgpUpdate], eval_instant: i64) -> BatchStats {
        let mut carry = self.carry.clone();
        let period_start = self.window.1;
        process_batch(
            &mut carry,
            &self.excluded,
            batch,
            period_start,
            eval_instant.max(period_start),
        )
    }
}

fn add_stats(
    stats: &BatchStats,
    ann: &mut BTreeMap<Pair, u64>,
    total: &mut BTreeMap<Ipv4Prefix, u64>,
    duration: &mut BTreeMap<Pair, i64>,
    span: &mut BTreeMap<Ipv4Prefix, i64>,
) {
    for (&pair, &c) in &stats.ann_count {
        *ann.entry(pair).or_insert(0) += c;
    }
    for (&prefix, &c) in &stats.total_count {
        *total.entry(prefix).or_insert(0) += c;
    }
    for (&pair, &d) in &stats.duration {
        *duration.entry(pair).or_insert(0) += d;
    }
    for (&prefix, &s) in &stats.span {
        *span.entry(prefix).or_insert(0) += s;
    }
}

fn sub_stats(
    stats: &BatchStats,
    ann: &mut BTreeMap<Pair, u64>,
    total: &mut BTreeMap<Ipv4Prefix, u64>,
    duration: &mut BTreeMap<Pair, i64>,
    span: &mut BTreeMap<Ipv4Prefix, i64>,
) {
    for (&pair, &c) in &stats.ann_count {
        if let Some(v) = ann.get_mut(&pair) {
            *v = v.saturating_sub(c);
            if *v == 0 {
                ann.remove(&pair);
            }
        }
    }
    for (&prefix, &c) in &stats.total_count {
        if let Some(v) = total.get_mut(&prefix) {
            *v = v.saturating_sub(c);
            if *v == 0 {
                total.remove(&prefix);
            }
        }
    }
    for (&pair, &d) in &stats.duration {
        if let Some(v) = duration.get_mut(&pair) {
            *v -= d;
            if *v <= 0 {
                duration.remove(&pair);
            }
        }
    }
    for (&prefix, &s) in &stats.span {
        if let Some(v) = span.get_mut(&prefix) {
            *v -= s;
            if *v <= 0 {
                span.remove(&prefix);
            }
        }
    }
}

fn threshold_ok(threshold: f64) -> Result<(), MonitorError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(MonitorError::Argument(format!(
            "threshold {threshold} outside [0,1)"
        )));
    }
    Ok(())
}

/// Frequency analytic: for each (prefix, origin) announced in the current
/// batch, the origin's share of the prefix's announcements over baseline plus
/// current must not fall below the threshold (strict less-than). A zero
/// threshold therefore never alerts.
pub fn frequency_analytic(
    baseline: &Baseline,
    current: &[BgpUpdate],
    threshold: f64,
) -> Result<Vec<Alert>, MonitorError> {
    threshold_ok(threshold)?;
    let eval_instant = current
        .iter()
        .map(|u| u.ts)
        .max()
        .unwrap_or(baseline.window().1);
    let stats = baseline.preview(current, eval_instant);
    let mut alerts = Vec::new();
    for (&(prefix, origin), &first_ts) in &stats.announced {
        let total = baseline.total_count(&prefix)
            + stats.total_count.get(&prefix).copied().unwrap_or(0);
        if total == 0 {
            continue;
        }
        let ann = baseline.ann_count(&prefix, origin)
            + stats.ann_count.get(&(prefix, origin)).copied().unwrap_or(0);
        let ratio = ann as f64 / total as f64;
        if ratio < threshold {
            alerts.push(Alert {
                detector: DetectorKind::Frequency,
                prefix,
                origin,
                evidence: ratio,
                ts: first_ts,
            });
        }
    }
    Ok(alerts)
}

/// Time analytic: for each (prefix, origin) announced in the current batch,
/// the origin's active-announcement duration as a fraction of the prefix's
/// observed span (baseline plus current, open intervals accrued up to
/// `eval_instant`) must not fall below the threshold (strict less-than).
pub fn time_analytic(
    baseline: &Baseline,
    current: &[BgpUpdate],
    threshold: f64,
    eval_instant: i64,
) -> Result<Vec<Alert>, MonitorError> {
    threshold_ok(threshold)?;
    let stats = baseline.preview(current, eval_instant);
    let mut alerts = Vec::new();
    for (&(prefix, origin), &first_ts) in &stats.announced {
        let span =
            baseline.observed_span(&prefix) + stats.span.get(&prefix).copied().unwrap_or(0);
        if span == 0 {
            continue;
        }
        let duration = baseline.active_duration(&prefix, origin)
            + stats.duration.get(&(prefix, origin)).copied().unwrap_or(0);
        let fraction = duration as f64 / span as f64;
        if fraction < threshold {
            alerts.push(Alert {
                detector: DetectorKind::Time,
                prefix,
                origin,
                evidence: fraction,
                ts: first_ts,
            });
        }
    }
    Ok(alerts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Ipv4Prefix {
        s.parse().unwrap()
    }

    fn ann(ts: i64, prefix: &str, origin: Asn) -> BgpUpdate {
        BgpUpdate::announce(ts, p(prefix), vec![7, origin], "c")
    }

    fn wd(ts: i64, prefix: &str) -> BgpUpdate {
        BgpUpdate::withdraw(ts, p(prefix), "c")
    }

    #[test]
    fn duration_accounting_announce_withdraw() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update(&[ann(100, "1.2.3.0/24", 10), wd(400, "1.2.3.0/24")])
            .unwrap();
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 10), 300);
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 10), 1);
        assert_eq!(b.total_count(&p("1.2.3.0/24")), 1);
        assert_eq!(b.observed_span(&p("1.2.3.0/24")), 300);
    }

    #[test]
    fn duplicate_announce_counts_but_interval_continues() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update_until(&[ann(100, "1.2.3.0/24", 10), ann(300, "1.2.3.0/24", 10)], 500)
            .unwrap();
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 10), 2);
        assert_eq!(b.total_count(&p("1.2.3.0/24")), 2);
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 10), 400);
    }

    #[test]
    fn replacement_announce_closes_previous_origin() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update_until(&[ann(100, "1.2.3.0/24", 10), ann(250, "1.2.3.0/24", 20)], 1000)
            .unwrap();
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 10), 150);
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 20), 750);
        assert!(b.active_duration(&p("1.2.3.0/24"), 10) <= b.observed_span(&p("1.2.3.0/24")));
    }

    #[test]
    fn empty_batch_is_identity() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update(&[ann(100, "1.2.3.0/24", 10)]).unwrap();
        let before = (
            b.ann_count(&p("1.2.3.0/24"), 10),
            b.total_count(&p("1.2.3.0/24")),
        );
        b.update(&[]).unwrap();
        let after = (
            b.ann_count(&p("1.2.3.0/24"), 10),
            b.total_count(&p("1.2.3.0/24")),
        );
        assert_eq!(before, after);
    }

    #[test]
    fn out_of_order_beyond_tolerance_errors() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update(&[ann(1000, "1.2.3.0/24", 10)]).unwrap();
        let err = b.update(&[ann(100, "1.2.3.0/24", 10)]).unwrap_err();
        assert!(matches!(err, MonitorError::Sequencing { .. }));
        // Within the 60 s tolerance is accepted.
        b.update(&[ann(950, "1.2.3.0/24", 10)]).unwrap();
    }

    #[test]
    fn open_interval_spans_batches() {
        let mut b = Baseline::new(0, 86_400 * 30);
        b.update_until(&[ann(0, "1.2.3.0/24", 10)], 3600).unwrap();
        b.update_until(&[], 7200).unwrap();
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 10), 7200);
        assert_eq!(b.observed_span(&p("1.2.3.0/24")), 7200);
    }

    #[test]
    fn window_trimming_expires_old_batches() {
        let mut b = Baseline::new(0, 100);
        b.update_until(&[ann(10, "1.2.3.0/24", 10), wd(20, "1.2.3.0/24")], 50)
            .unwrap();
        b.update_until(&[ann(60, "1.2.3.0/24", 20), wd(70, "1.2.3.0/24")], 100)
            .unwrap();
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 10), 1);
        // Third batch pushes the window past the first batch only.
        b.update_until(&[], 160).unwrap();
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 10), 0);
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 20), 1);
        // And past the second as well.
        b.update_until(&[], 260).unwrap();
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 20), 0);
    }

    #[test]
    fn frequency_alerts_on_rare_origin() {
        let mut b = Baseline::new(0, 86_400 * 60);
        let mut batch = Vec::new();
        for i in 0..1000 {
            batch.push(ann(i * 60, "1.2.3.0/24", 10));
        }
        b.update_until(&batch, 60_000).unwrap();
        let current = vec![ann(60_100, "1.2.3.0/24", 999)];
        let alerts = frequency_analytic(&b, &current, 0.0025).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].origin, 999);
        assert!((alerts[0].evidence - 1.0 / 1001.0).abs() < 1e-12);
        assert_eq!(alerts[0].ts, 60_100);
    }

    #[test]
    fn frequency_sole_origin_never_alerts() {
        let mut b = Baseline::new(0, 86_400 * 60);
        b.update_until(&[ann(0, "1.2.3.0/24", 10)], 3600).unwrap();
        let current = vec![ann(4000, "1.2.3.0/24", 10)];
        let alerts = frequency_analytic(&b, &current, 0.5).unwrap();
        assert!(alerts.is_empty());
    }

    #[test]
    fn frequency_threshold_boundary_is_strict() {
        // Ratio exactly 0.25 with threshold 0.25 must not alert.
        let mut b = Baseline::new(0, 86_400 * 60);
        b.update_until(
            &[
                ann(0, "1.2.3.0/24", 10),
                ann(10, "1.2.3.0/24", 10),
                ann(20, "1.2.3.0/24", 10),
            ],
            100,
        )
        .unwrap();
        let current = vec![ann(150, "1.2.3.0/24", 20)];
        let alerts = frequency_analytic(&b, &current, 0.25).unwrap();
        assert!(alerts.is_empty());
        let alerts = frequency_analytic(&b, &current, 0.2500001).unwrap();
        assert_eq!(alerts.len(), 1);
    }

    #[test]
    fn time_alerts_on_brief_origin() {
        // Prefix observed for 720 hours, offending origin active ~4 minutes.
        let mut b = Baseline::new(0, 86_400 * 60);
        let span = 720 * 3600;
        b.update_until(&[ann(0, "1.2.3.0/24", 10)], span).unwrap();
        let current = vec![ann(span + 10, "1.2.3.0/24", 999), ann(span + 250, "1.2.3.0/24", 10)];
        let alerts = time_analytic(&b, &current, 0.065, span + 3600).unwrap();
        let offender: Vec<_> = alerts.iter().filter(|a| a.origin == 999).collect();
        assert_eq!(offender.len(), 1);
        assert!(offender[0].evidence < 1e-3);
        // The long-lived owner never alerts.
        assert!(alerts.iter().all(|a| a.origin != 10));
    }

    #[test]
    fn time_full_span_origin_never_alerts() {
        let mut b = Baseline::new(0, 86_400 * 60);
        b.update_until(&[ann(0, "1.2.3.0/24", 10)], 3600).unwrap();
        let current = vec![ann(4000, "1.2.3.0/24", 10)];
        let alerts = time_analytic(&b, &current, 0.9999, 7200).unwrap();
        assert!(alerts.is_empty(), "fraction 1.0 is never below a threshold < 1");
    }

    #[test]
    fn analytics_reject_bad_threshold() {
        let b = Baseline::new(0, 100);
        assert!(frequency_analytic(&b, &[], 1.0).is_err());
        assert!(frequency_analytic(&b, &[], -0.1).is_err());
        assert!(frequency_analytic(&b, &[], 0.0).is_ok());
        assert!(time_analytic(&b, &[], 1.5, 0).is_err());
    }

    #[test]
    fn excluded_pairs_do_not_accrue_but_still_surface() {
        let mut b = Baseline::new(0, 86_400 * 60);
        let mut batch = Vec::new();
        for i in 0..400 {
            batch.push(ann(i * 60, "1.2.3.0/24", 10));
        }
        b.update_until(&batch, 30_000).unwrap();
        b.exclude_pair(p("1.2.3.0/24"), 999);

        // Attacker floods; its events must not pollute counts or close the
        // owner's interval.
        let mut flood = vec![ann(30_100, "1.2.3.0/24", 999)];
        for i in 0..200 {
            flood.push(ann(30_200 + i, "1.2.3.0/24", 999));
        }
        let alerts = frequency_analytic(&b, &flood, 0.0025).unwrap();
        assert_eq!(alerts.len(), 1, "excluded pair still evaluated");
        assert_eq!(alerts[0].origin, 999);
        assert_eq!(alerts[0].evidence, 0.0);

        b.update_until(&flood, 40_000).unwrap();
        assert_eq!(b.ann_count(&p("1.2.3.0/24"), 999), 0);
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 999), 0);
        // Owner's interval survived the flood.
        assert_eq!(b.active_duration(&p("1.2.3.0/24"), 10), 40_000);
    }

    #[test]
    fn frequency_ratios_sum_to_one_per_prefix() {
        let mut b = Baseline::new(0, 86_400 * 60);
        b.update_until(
            &[
                ann(0, "1.2.3.0/24", 10),
                ann(10, "1.2.3.0/24", 20),
                ann(20, "1.2.3.0/24", 10),
            ],
            100,
        )
        .unwrap();
        let current = vec![ann(200, "1.2.3.0/24", 10), ann(210, "1.2.3.0/24", 20)];
        let stats = b.preview(&current, 300);
        let total = b.total_count(&p("1.2.3.0/24"))
            + stats.total_count.get(&p("1.2.3.0/24")).copied().unwrap_or(0);
        let mut ratio_sum = 0.0;
        for origin in [10, 20] {
            let annc = b.ann_count(&p("1.2.3.0/24"), origin)
                + stats
                    .ann_count
                    .get(&(p("1.2.3.0/24"), origin))
                    .copied()
                    .unwrap_or(0);
            ratio_sum += annc as f64 / total as f64;
        }
        assert!((ratio_sum - 1.0).abs() < 1e-12);
    }
}
