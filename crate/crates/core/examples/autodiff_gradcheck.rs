//! Builds a small softmax cross-entropy on the tape, prints its gradient
//! and compares it against central differences.

use divpo::autodiff::{finite_difference_check, Array, AutodiffError, Tape, Var};

fn loss(t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let z = t.reshape(x, vec![2, 3])?;
    let lp = t.log_softmax(z)?;
    let picked = t.pick(lp, &[2, 0])?;
    let s = t.sum(picked);
    Ok(t.neg(s))
}

fn main() -> Result<(), AutodiffError> {
    let params = [0.3, -1.2, 0.8, 2.0, 0.1, -0.4];
    let mut tape = Tape::new();
    let x = tape.leaf(Array::vector(params.to_vec()));
    let root = loss(&mut tape, x)?;
    tape.backward(root)?;
    println!("loss     {:.6}", tape.item(root));
    println!("gradient {:?}", tape.grad(x).data());
    let err = finite_difference_check(loss, &params, 1e-6)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
