fn main() {
    println!("tsclab");
}
