fn main() {
    println!("pomcrf");
}
