//! Writes a PPM depiction of a SMILES string: `depict <smiles> <out.ppm> [res]`.

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: depict <smiles> <out.ppm> [resolution]");
        std::process::exit(2);
    }
    let res = args.get(3).map_or(molmm_chem::render::DEFAULT_RESOLUTION, |r| r.parse().expect("resolution"));
    let m = molmm_chem::parse_smiles(&args[1]).expect("valid SMILES");
    let img = molmm_chem::render(&m, res).expect("renderable");
    std::fs::write(&args[2], img.to_ppm()).expect("write image");
}
