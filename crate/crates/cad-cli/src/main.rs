fn main() {
    println!("cad");
}
