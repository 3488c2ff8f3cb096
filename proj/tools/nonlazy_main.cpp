// Placeholder entry point; replaced by the full experiment driver.
int main() { return 0; }
