use guidance3d::grid::{Grid, Mask};
use guidance3d::mask::{rect_mask, MaskConfig};
use proptest::prelude::*;

fn blob_masks(w: usize, h: usize, blobs: &[(usize, usize, usize, usize)]) -> Vec<Mask> {
    blobs
        .iter()
        .map(|&(x, y, bw, bh)| Grid::from_fn(w, h, |a, b| bw > 0 && (x..x + bw).contains(&a) && (y..y + bh).contains(&b)))
        .collect()
}

fn is_one_rectangle(m: &Mask) -> bool {
    match m.bbox() {
        None => false,
        Some((x0, y0, x1, y1)) => m.count() == (x1 - x0 + 1) * (y1 - y0 + 1),
    }
}

proptest! {
    #[test]
    fn mask_contract(
        blobs in prop::collection::vec((0usize..30, 0usize..20, 0usize..8, 1usize..8), 1..8),
        keeps in prop::collection::vec((0usize..34, 0usize..24, 0usize..6), 8),
        margin in 0usize..4,
        window in 1usize..6,
    ) {
        let (w, h) = (40, 30);
        prop_assume!(blobs.iter().any(|b| b.2 > 0));
        let garment = blob_masks(w, h, &blobs);
        let keep: Vec<Mask> = keeps[..garment.len()]
            .iter()
            .map(|&(x, y, s)| Grid::from_fn(w, h, |a, b| (x..x + s).contains(&a) && (y..y + s).contains(&b)))
            .collect();
        let cfg = MaskConfig { margin, window };
        let out = rect_mask(&garment, &keep, &cfg).unwrap();
        let bare = rect_mask(&garment, &[], &cfg).unwrap();
        let wider = rect_mask(&garment, &keep, &MaskConfig { margin, window: window + 1 }).unwrap();
        for i in 0..garment.len() {
            prop_assert!(is_one_rectangle(&bare.masks[i]));
            for p in 0..w * h {
                let g = garment[i].data()[p];
                let k = keep[i].data()[p];
                let m = out.masks[i].data()[p];
                prop_assert!(!(m && k));
                prop_assert!(!(g && !k) || m);
                prop_assert!(!m || wider.masks[i].data()[p]);
            }
        }
    }
}
