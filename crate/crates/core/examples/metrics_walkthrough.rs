//! Offline and streaming metrics on a short hand-written stream.
//!
//! ```text
//! cargo run --example metrics_walkthrough
//! ```

use wmd::data::ActionClass;
use wmd::metrics::{confusion, offline_metrics, online_trace, overlap, WeightMode};

fn main() -> wmd::Result<()> {
    use ActionClass::*;
    let gt = [Stop, Stop, Stop, Walk, Walk, Walk, Walk, TurnLeft, TurnLeft, TurnLeft, Walk, Walk];
    let pred = [Stop, Stop, Walk, Stop, Walk, Walk, TurnLeft, Walk, TurnLeft, TurnLeft, TurnLeft, Walk];
    let gt: Vec<usize> = gt.iter().map(|c| c.id()).collect();
    let pred: Vec<usize> = pred.iter().map(|c| c.id()).collect();

    let counts = confusion(&pred, &gt, ActionClass::COUNT)?;
    let m = offline_metrics(&counts);
    println!("offline: top-1 {:.3}  acc {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}", m.top1, m.acc, m.precision, m.recall, m.f1);
    for class in ActionClass::ALL {
        let (i, pc) = (class.id(), &m.per_class[class.id()]);
        println!(
            "  {class:>10}: tp {} tn {:2} fp {} fn {}  precision {:.3} recall {:.3}",
            counts.tp[i], counts.tn[i], counts.fp[i], counts.fn_[i], pc.precision, pc.recall
        );
    }

    let times: Vec<f64> = (0..gt.len()).map(|i| i as f64 * 2.0 / 15.0).collect();
    println!("\nstreaming, w from the seen ground truth:");
    println!("   t      IA     wIA     IP     cIP");
    for s in online_trace(&pred, &gt, &times, ActionClass::COUNT, WeightMode::GroundTruth)? {
        println!("{:5.2}  {:.3}  {:.3}  {:.3}  {:.3}", s.t, s.ia, s.wia, s.ip, s.cip);
    }
    let unit = online_trace(&pred, &gt, &times, ActionClass::COUNT, WeightMode::Fixed(1.0))?;
    let last = unit.last().expect("non-empty stream");
    println!("with w = 1: wIA {:.3} = IA {:.3}, cIP {:.3} = IP {:.3}", last.wia, last.ia, last.cip, last.ip);

    let a = [true, true, false, false, true, false];
    let b = [true, false, false, true, true, false];
    let (iou, dice) = overlap(&a, &b)?;
    println!("\nregion overlap: IoU {iou:.3}, Dice {dice:.3}");
    Ok(())
}
