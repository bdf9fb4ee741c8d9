// args: 5
int count;
int total;
int step(int k) {
    count = count + 1;
    total += k;
    return total;
}
int f(int n) {
    int last = 0;
    for (int i = 1; i <= n; i++)
        last = step(i * 2);
    return last + count;
}
