//! Stacking Based on Time: polarity accumulation into fixed-duration
//! frames, and assembly of supervised stack sequences.

use super::{EventStream, ImageGrid, LabelGrid, SbtStack, StackSequence};
use crate::error::{Error, Result};

/// Accumulates an event stream into SBT stacks of `n` frames spanning
/// `delta_t_us` each. Windows are half-open `[start, end)` anchored at
/// t = 0, so every event lands in exactly one frame of exactly one stack;
/// boundary events go to the later window.
pub fn stack_events(stream: &EventStream, delta_t_us: u64, n: usize) -> Result<Vec<SbtStack>> {
    if n == 0 || delta_t_us == 0 {
        return Err(Error::Config("stack_events: delta_t and n must be positive".into()));
    }
    if delta_t_us % n as u64 != 0 {
        return Err(Error::Config(format!(
            "stack_events: delta_t {delta_t_us}us not divisible by n={n}"
        )));
    }
    let sub_t = delta_t_us / n as u64;
    let covered = stream
        .duration_us
        .max(stream.events.last().map(|e| e.t_us as u64 + 1).unwrap_or(0));
    let num_stacks = covered.div_ceil(delta_t_us) as usize;
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut stacks: Vec<SbtStack> = (0..num_stacks)
        .map(|k| {
            let start = k as u64 * delta_t_us;
            SbtStack::zeros(n, h, w, (start, start + delta_t_us))
        })
        .collect();
    let mut prev_t = 0u32;
    for (i, e) in stream.events.iter().enumerate() {
        if e.t_us < prev_t {
            return Err(Error::Data(format!("unsorted event at index {i}")));
        }
        prev_t = e.t_us;
        if e.x >= stream.width || e.y >= stream.height {
            return Err(Error::Data(format!(
                "event {i} at ({}, {}) outside sensor bounds",
                e.x, e.y
            )));
        }
        let t = e.t_us as u64;
        let k = (t / delta_t_us) as usize;
        let f = ((t - k as u64 * delta_t_us) / sub_t) as usize;
        let idx = (f * h + e.y as usize) * w + e.x as usize;
        stacks[k].frames[idx] += e.p as i32;
    }
    Ok(stacks)
}

/// Partitions stacks (with one label per stack) into non-overlapping
/// sequences of `seq_len` stacks, keeping the labels of the supervised
/// suffix. Leftover stacks are dropped; fewer stacks than `seq_len` yields
/// an empty result with a warning.
pub fn make_sequences(
    stacks: &[SbtStack],
    labels: &[LabelGrid],
    seq_len: usize,
    warmup: usize,
) -> Result<Vec<StackSequence>> {
    if seq_len == 0 || warmup >= seq_len {
        return Err(Error::Config(format!(
            "make_sequences: need seq_len > warmup, got {seq_len} <= {warmup}"
        )));
    }
    if labels.len() != stacks.len() {
        return Err(Error::Shape(format!(
            "make_sequences: {} labels for {} stacks",
            labels.len(),
            stacks.len()
        )));
    }
    if stacks.len() < seq_len {
        log::warn!(
            "make_sequences: only {} stacks for sequence length {seq_len}; returning none",
            stacks.len()
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i + seq_len <= stacks.len() {
        let seq_stacks = stacks[i..i + seq_len].to_vec();
        let seq_labels = labels[i + warmup..i + seq_len].to_vec();
        out.push(StackSequence { stacks: seq_stacks, labels: seq_labels, aug: None, warmup });
        i += seq_len;
    }
    Ok(out)
}

/// Attaches one intensity image per stack as the augmentation channel.
pub fn fuse_image_channel(mut seq: StackSequence, images: &[ImageGrid]) -> Result<StackSequence> {
    if images.is_empty() {
        return Ok(seq);
    }
    if images.len() != seq.stacks.len() {
        return Err(Error::Shape(format!(
            "fuse_image_channel: {} images for {} stacks",
            images.len(),
            seq.stacks.len()
        )));
    }
    for (img, st) in images.iter().zip(&seq.stacks) {
        if img.width != st.width || img.height != st.height {
            return Err(Error::Shape(format!(
                "fuse_image_channel: image {}x{} vs stack {}x{}",
                img.width, img.height, st.width, st.height
            )));
        }
    }
    seq.aug = Some(images.to_vec());
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventRecord;
    use rand::{Rng, SeedableRng};

    fn stream(width: u16, height: u16, dur: u64, evs: Vec<EventRecord>) -> EventStream {
        EventStream::new(width, height, dur, evs).unwrap()
    }

    #[test]
    fn empty_stream_gives_zero_stacks() {
        let s = stream(8, 8, 100_000, vec![]);
        let stacks = stack_events(&s, 50_000, 5).unwrap();
        assert_eq!(stacks.len(), 2);
        for st in &stacks {
            assert!(st.frames.iter().all(|v| *v == 0));
        }
    }

    #[test]
    fn single_event_placement() {
        // +1 event at (2,3), t = 12ms with dt = 50ms, n = 5 -> stack 0,
        // frame 1 (T = 10ms windows), pixel (2,3)
        let e = EventRecord { x: 2, y: 3, t_us: 12_000, p: 1 };
        let s = stream(8, 8, 50_000, vec![e]);
        let stacks = stack_events(&s, 50_000, 5).unwrap();
        assert_eq!(stacks.len(), 1);
        let st = &stacks[0];
        for f in 0..5 {
            for y in 0..8 {
                for x in 0..8 {
                    let v = st.frame(f)[y * 8 + x];
                    if f == 1 && x == 2 && y == 3 {
                        assert_eq!(v, 1);
                    } else {
                        assert_eq!(v, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn boundary_event_goes_to_later_window() {
        let e = EventRecord { x: 0, y: 0, t_us: 50_000, p: 1 };
        let s = stream(4, 4, 100_000, vec![e]);
        let stacks = stack_events(&s, 50_000, 5).unwrap();
        assert_eq!(stacks[0].abs_sum(), 0);
        assert_eq!(stacks[1].frame(0)[0], 1);
    }

    #[test]
    fn random_stream_matches_brute_force_accumulation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let (w, h) = (16u16, 12u16);
        let dur = 260_000u64;
        let mut ts: Vec<u32> = (0..10_000).map(|_| rng.gen_range(0..dur as u32)).collect();
        ts.sort_unstable();
        let evs: Vec<EventRecord> = ts
            .into_iter()
            .map(|t| EventRecord {
                x: rng.gen_range(0..w),
                y: rng.gen_range(0..h),
                t_us: t,
                p: if rng.gen_bool(0.5) { 1 } else { -1 },
            })
            .collect();
        let s = stream(w, h, dur, evs.clone());
        let (dt, n) = (50_000u64, 5usize);
        let stacks = stack_events(&s, dt, n).unwrap();

        // brute-force oracle: direct per-event accumulation
        let num_stacks = (dur as usize).div_ceil(dt as usize);
        let plane = w as usize * h as usize;
        let mut oracle = vec![vec![0i32; n * plane]; num_stacks];
        for e in &evs {
            let k = (e.t_us as u64 / dt) as usize;
            let f = ((e.t_us as u64 % dt) / (dt / n as u64)) as usize;
            oracle[k][f * plane + e.y as usize * w as usize + e.x as usize] += e.p as i32;
        }
        assert_eq!(stacks.len(), num_stacks);
        for (st, ex) in stacks.iter().zip(&oracle) {
            assert_eq!(&st.frames, ex);
        }
        // partition: every event lands exactly once (signed sums match)
        let total: i64 = stacks.iter().flat_map(|s| s.frames.iter()).map(|v| *v as i64).sum();
        let expect: i64 = evs.iter().map(|e| e.p as i64).sum();
        assert_eq!(total, expect);
    }

    #[test]
    fn indivisible_window_rejected() {
        let s = stream(4, 4, 100, vec![]);
        assert!(stack_events(&s, 50_001, 5).is_err());
    }

    #[test]
    fn sequences_partition_protocol() {
        // 8 stacks, seq_len 4, warmup 1 -> 2 sequences x 3 labels
        let stacks: Vec<SbtStack> =
            (0..8).map(|k| SbtStack::zeros(5, 4, 4, (k * 50, (k + 1) * 50))).collect();
        let labels: Vec<LabelGrid> = (0..8).map(|_| LabelGrid::filled(4, 4, 0)).collect();
        let seqs = make_sequences(&stacks, &labels, 4, 1).unwrap();
        assert_eq!(seqs.len(), 2);
        for s in &seqs {
            assert_eq!(s.labels.len(), 3);
            assert_eq!(s.supervised_steps(), 3);
        }

        // minimal case: seq_len 2, warmup 1 -> 1 label each
        let seqs = make_sequences(&stacks, &labels, 2, 1).unwrap();
        assert_eq!(seqs.len(), 4);
        assert!(seqs.iter().all(|s| s.labels.len() == 1));

        // 7 stacks, seq_len 4 -> 1 sequence, 3 dropped
        let seqs = make_sequences(&stacks[..7], &labels[..7], 4, 1).unwrap();
        assert_eq!(seqs.len(), 1);
    }

    #[test]
    fn too_few_stacks_yields_empty() {
        let stacks: Vec<SbtStack> = (0..3).map(|_| SbtStack::zeros(5, 4, 4, (0, 50))).collect();
        let labels: Vec<LabelGrid> = (0..3).map(|_| LabelGrid::filled(4, 4, 0)).collect();
        assert!(make_sequences(&stacks, &labels, 4, 1).unwrap().is_empty());
    }

    #[test]
    fn image_fusion_checks_and_passthrough() {
        let stacks: Vec<SbtStack> = (0..4).map(|_| SbtStack::zeros(5, 4, 4, (0, 50))).collect();
        let labels: Vec<LabelGrid> = (0..4).map(|_| LabelGrid::filled(4, 4, 0)).collect();
        let seq = make_sequences(&stacks, &labels, 4, 1).unwrap().remove(0);
        // no images: unchanged
        let same = fuse_image_channel(seq.clone(), &[]).unwrap();
        assert!(same.aug.is_none());
        // constant image attaches as constant channel
        let imgs: Vec<ImageGrid> =
            (0..4).map(|_| ImageGrid::new(4, 4, vec![0.5; 16]).unwrap()).collect();
        let fused = fuse_image_channel(seq.clone(), &imgs).unwrap();
        let aug = fused.aug.unwrap();
        assert_eq!(aug.len(), 4);
        assert!(aug[0].data.iter().all(|v| *v == 0.5));
        // mismatched resolution rejected
        let bad = vec![ImageGrid::new(3, 4, vec![0.0; 12]).unwrap(); 4];
        assert!(fuse_image_channel(seq, &bad).is_err());
    }
}
