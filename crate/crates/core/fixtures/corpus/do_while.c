// args: 10
int f(int n) {
    int s = 0;
    do {
        s += n;
        n -= 3;
    } while (n > 0);
    return s;
}
