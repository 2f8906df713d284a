//! Shared sample constructions for the benchmarks.

use std::f64::consts::PI;

use scatterfit::data::DataSet;
use scatterfit::expr::{cos, pow, sin};
use scatterfit::model::{Model, Scaling};
use scatterfit::potential::{box_potential, lattice, pos, sas, Potential};
use scatterfit::reflect::{Layer, Material, Multilayer, Stack};
use scatterfit::{Expr, Functor, Parameter, Variable};

/// Ten-period Ni/Ti superlattice on silicon with a native oxide cap.
pub fn superlattice() -> Multilayer {
    let ni = Layer::new("ni", Material::new("ni", 9.41e-4, 1.9e-7), 7.0, 0.5);
    let ti = Layer::new("ti", Material::new("ti", -1.95e-4, 2.5e-7), 7.0, 0.5);
    let si = Layer::new("si", Material::new("si", 2.074e-4, 0.0), 0.0, 0.3);
    let oxide = Layer::new("sio2", Material::new("sio2", 3.47e-4, 0.0), 2.0, 0.4);
    Multilayer::new("superlattice", Material::vacuum(), si)
        .with(oxide)
        .with(Stack::new("period", vec![ni, ti], 10.0))
}

pub fn q_points(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Oxide-coated silicon fin (qx, qy, qz), repeated with a 200 nm pitch.
pub fn fin_intensity() -> (Potential, Functor) {
    let v = [Variable::new("qx"), Variable::new("qy"), Variable::new("qz")];
    let vars = [&v[0], &v[1], &v[2]];
    let si = Material::new("si", 2.0071e-5, -4.58e-7);
    let hfo2 = Material::new("hfo2", 6.3976e-5, -4.178e-6);
    let shell = box_potential(vars, &hfo2, 60.0, 1000.0, 90.0, vec![pos(0.0, 0.0, 5.0)]);
    let core_hole = box_potential(vars, &hfo2, 40.0, 1000.0, 80.0, vec![pos(0.0, 0.0, 0.0)]);
    let core = box_potential(vars, &si, 40.0, 1000.0, 80.0, vec![pos(0.0, 0.0, 0.0)]);
    let fin = shell.try_sub(&core_hole).unwrap().try_add(&core).unwrap();
    let l = lattice(&v[0], 200.0, 20).unwrap();
    let i = sas(&fin, &l).unwrap();
    (fin, i)
}

/// Monodisperse spheres with the radius as the only free parameter, fitted
/// against data simulated at R = 7.5.
pub fn sphere_fit(r0: f64) -> (Parameter, Model) {
    let r = Parameter::builder("R", r0).bounds(1.0, 20.0).build().unwrap();
    let q = Variable::new("q");
    let intensity = |r: Expr| {
        let qr = &q * &r;
        let f = 3.0 * (sin(&qr) - &qr * cos(&qr)) / pow(&qr, 3.0);
        1e5 * pow(1.2e-3 * (4.0 / 3.0 * PI * pow(&r, 3.0)) * f, 2.0) + 4.0
    };
    let qs = q_points(400, 0.01, 2.0);
    let truth = Functor::new("t", intensity(Expr::constant(7.5))).unwrap().evaluate_real(&[&qs]).unwrap();
    let f = Functor::new("I", intensity(Expr::from(&r))).unwrap();
    let d = DataSet::new_1d("sphere", qs, truth, None).unwrap();
    (r, Model::new("sphere", f, d, Scaling::Log).unwrap())
}
