// args: -123
int f(int x) { return x; }
