// args: 300
char c;
short s;
int f(int x) {
    char a = 1;
    short b = x * 3;
    _Bool t = x > 0;
    c = a + 2;
    s = b - x;
    return a + b + c + s + t;
}
