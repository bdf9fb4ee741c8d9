// args:
int add3(int a, int b, int c) { return a + b + c; }
int main(void) { return add3(1, add3(2, 3, 4), 5) * 2 + add3(add3(1, 1, 1), 0, 1); }
