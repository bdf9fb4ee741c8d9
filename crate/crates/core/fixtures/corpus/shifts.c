// args: 11
int f(int x) { return (x << 3) + (x << 1) - (x * 2 << 2); }
