//! Patch grouping on a phantom's zero-filled image, plus a planted duplicate
//! patch that the matcher has to find.

use dynrecon::harness::{generate_phantom, PhantomSpec};
use dynrecon::mri::{adjoint_encode, make_vds_mask};
use dynrecon::patching::{block_match, gather_groups, pad_replicate, assemble_average};

fn main() -> dynrecon::Result<()> {
    let spec = PhantomSpec {
        nx: 32,
        ny: 32,
        nt: 6,
        ..PhantomSpec::default()
    };
    let ph = generate_phantom(&spec)?;
    let mask = make_vds_mask(spec.nx, spec.ny, spec.nt, 4.0, 4, 0)?;
    let x0 = adjoint_encode(&ph.kspace.masked(&mask)?, &ph.sensitivities, &mask)?;

    let (p, k, window) = (2, 8, 4);
    let (xp, pad) = pad_replicate(&x0, p)?;
    let map = block_match(&xp, &pad, p, k, window)?;
    println!("{} groups of {k} patches, batch shape {:?}", map.l_count(), map.batch_shape());
    let counts = map.contribution_count();
    let covered = counts.iter().filter(|&&c| c > 0).count();
    println!(
        "pixels covered: {covered}/{}, max contributions {}",
        counts.len(),
        counts.iter().max().unwrap()
    );
    let g = map.groups[map.l_count() / 2 + 8].clone();
    println!("a central group: {g:?}");

    // averaging the gathered groups back gives the padded image again
    let back = assemble_average(&gather_groups(&xp, &map)?)?;
    println!("gather then average, max error {:.1e}", back.tensor().max_abs_diff(xp.tensor()));

    // plant a copy of the key patch at (6, 8) next to the key at (4, 4)
    let mut planted = xp.clone();
    for t in 0..spec.nt {
        for dx in 0..p {
            for dy in 0..p {
                planted.set(6 + dx, 8 + dy, t, planted.get(4 + dx, 4 + dy, t));
            }
        }
    }
    let map = block_match(&planted, &pad, p, 2, window)?;
    let key = map.groups.iter().find(|g| g[0] == (4, 4)).unwrap();
    println!("key (4, 4) matched {:?}", key[1]);
    Ok(())
}
